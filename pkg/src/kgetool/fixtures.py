"""Bundled offline fixtures: a small family KG, seven tools and a 20-sample corpus.

``replay_gold_echo.jsonl`` holds the gold-echo answers to every prompt sent
by corpus runs in each of :func:`replay_configs`, so those runs replay without
any model. :func:`record_gold_echo_replay` regenerates it.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from kgetool import mocks
from kgetool.dataset import Sample, ToolDoc, load_dataset, load_tools
from kgetool.harness import EndpointConfig, RunConfig, run_corpus
from kgetool.kg import KnowledgeGraph, load_kg
from kgetool.llm import Gateway, RecordingBackend, ReplayStore
from kgetool.similarity import LexicalSimilarity

EXTRACTION_MODEL = "gold-echo-extractor"
TOOLUSE_MODEL = "gold-echo-tooluser"


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("kgetool").joinpath("data", "fixtures", name)))


def family_kg() -> KnowledgeGraph:
    return load_kg(fixture_path("family_kg.json").read_text(encoding="utf-8"))


def seed_kg() -> KnowledgeGraph:
    """The three-person starting family (six relationship triples)."""
    return load_kg(fixture_path("seed_kg.tsv").read_text(encoding="utf-8"))


def tools() -> dict[str, ToolDoc]:
    return load_tools(fixture_path("tools.json"))


def samples() -> list[Sample]:
    return load_dataset(fixture_path("dataset.json"))


def value_map() -> dict[str, str]:
    return json.loads(fixture_path("value_map.json").read_text(encoding="utf-8"))


def gold_echo_config(mode: str, **overrides) -> RunConfig:
    return RunConfig(
        mode=mode,
        extraction_endpoint=EndpointConfig(EXTRACTION_MODEL),
        tooluse_endpoint=EndpointConfig(TOOLUSE_MODEL),
        **overrides,
    )


def replay_configs() -> list[RunConfig]:
    return [
        gold_echo_config("golden"),
        gold_echo_config("extracted"),
        gold_echo_config("full_kg"),
        gold_echo_config("documents", n_docs=3),
        gold_echo_config("true_values", value_map=value_map()),
    ]


def record_gold_echo_replay(path: str | Path) -> ReplayStore:
    """Run the gold-echo mocks over the corpus for every replay config, recording to ``path``."""
    store = ReplayStore(path)
    corpus, kg, docs = samples(), family_kg(), tools()
    for cfg in replay_configs():
        run_corpus(
            corpus, kg, docs, cfg,
            extraction_gateway=Gateway(RecordingBackend(mocks.gold_echo_extraction(corpus), store), EXTRACTION_MODEL),
            tooluse_gateway=Gateway(
                RecordingBackend(mocks.gold_echo_tooluse(corpus, value_map=cfg.value_map), store), TOOLUSE_MODEL
            ),
            sim=LexicalSimilarity(),
        )
    return store
