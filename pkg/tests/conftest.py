from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgetool import fixtures
from kgetool.kg import KnowledgeGraph, Triple

_ACCEPTANCE: dict[int, tuple[str, bool]] = {}


def random_triples(rng: random.Random, max_edges: int = 30, n_entities: int = 8,
                   n_relations: int = 5) -> list[tuple[str, str, str]]:
    entities = [f"e{i}" for i in range(rng.randint(2, n_entities))]
    relations = [f"r{i}" for i in range(rng.randint(1, n_relations))]
    count = rng.randint(1, max_edges)
    return sorted({(rng.choice(entities), rng.choice(relations), rng.choice(entities)) for _ in range(count)})


def kg_of(triples) -> KnowledgeGraph:
    return KnowledgeGraph.from_triples(Triple(*t) for t in triples)


@pytest.fixture(scope="session")
def seed_kg() -> KnowledgeGraph:
    return fixtures.seed_kg()


@pytest.fixture(scope="session")
def family_kg() -> KnowledgeGraph:
    return fixtures.family_kg()


@pytest.fixture(scope="session")
def corpus():
    return fixtures.samples()


@pytest.fixture(scope="session")
def tool_docs():
    return fixtures.tools()


@pytest.fixture(scope="session")
def replay_path() -> Path:
    return fixtures.fixture_path("replay_gold_echo.jsonl")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_acceptance", None)
    if marker is None:
        return
    number, title = marker
    failed = report.failed
    if report.when == "call" or failed:
        prev = _ACCEPTANCE.get(number, (title, True))[1]
        _ACCEPTANCE[number] = (title, prev and not failed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        report._acceptance = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {title}")
