import itertools
import json
import random
from dataclasses import asdict
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgetool.dataset import ToolCall
from kgetool.evaluator import (
    ExtractionMetrics,
    ToolUseMetrics,
    aggregate,
    extract_tool_call,
    grade_extraction,
    grade_tool_use,
    normalize_value,
    write_report,
)
from kgetool.kg import RelationPath, Triple
from kgetool.llm import ChatResponse
from kgetool.search_parser import FormatError, ParsedSearches
from oracles import mean_pct

STYLES = json.loads((Path(__file__).parent / "data" / "tool_output_styles.json").read_text(encoding="utf-8"))

A, B, C = Triple("Bob", "father", "Jack"), Triple("Bob", "mother", "Alice"), Triple("Alice", "son", "Bob")
VALID = ParsedSearches((RelationPath("Bob", ("father",)),), "")


def test_identity(family_kg):
    m = grade_extraction({A, B}, {A, B}, VALID, family_kg, {"Jack"})
    assert (m.em, m.f1, m.coverage, m.no_hallucination, m.format_error) == (1, 1.0, 1, 1, 0)


def test_half_overlap(family_kg):
    m = grade_extraction({A, B}, {A, C}, VALID, family_kg, set())
    assert (m.tp, m.fp, m.fn) == (1, 1, 1)
    assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)
    assert m.em == 0


def test_format_error_zeros(family_kg):
    m = grade_extraction({A}, {A}, FormatError("prose", "none"), family_kg, {"Jack"})
    assert (m.format_error, m.em, m.f1, m.coverage, m.no_hallucination) == (1, 0, 0.0, 0, 0)
    assert m.fn == 1


def test_hallucination_flag(family_kg):
    fake = ParsedSearches((RelationPath("Bob", ("mother", "prefer_alcohol_store")),), "")
    assert grade_extraction({A}, set(), fake, family_kg, set()).no_hallucination == 0
    assert grade_extraction({A}, set(), None, family_kg, set()).no_hallucination == 1


def test_empty_sets_are_exact(family_kg):
    m = grade_extraction(set(), set(), VALID, family_kg, set())
    assert (m.em, m.f1, m.coverage) == (1, 1.0, 1)


triples = st.sets(st.sampled_from([A, B, C, Triple("Jack", "wife", "Alice")]))


@given(triples, triples)
def test_f1_symmetric_and_bounded(x, y):
    from kgetool import fixtures

    kg = fixtures.seed_kg()
    f_xy = grade_extraction(x, y, VALID, kg, set()).f1
    assert f_xy == grade_extraction(y, x, VALID, kg, set()).f1
    assert 0.0 <= f_xy <= 1.0
    assert (f_xy == 1.0) == (x == y)


def test_tool_use_identity_and_no_call():
    gold = ToolCall("order_pizza", {"crust": "thin", "topping": "ham"})
    assert grade_tool_use(gold, gold) == ToolUseMetrics(1, 1, 2, 2, 1)
    assert grade_tool_use(None, gold) == ToolUseMetrics(0, 0, 0, 2, 0)


def test_two_parameter_truth_table():
    gold = ToolCall("order_pizza", {"crust": "thin", "topping": "ham"})
    for crust_ok, topping_ok, name_ok in itertools.product([True, False], repeat=3):
        pred = ToolCall("order_pizza" if name_ok else "order_food",
                        {"crust": "thin" if crust_ok else "thick", "topping": "ham" if topping_ok else "olive"})
        m = grade_tool_use(pred, gold)
        hits = int(crust_ok) + int(topping_ok)
        assert m == ToolUseMetrics(int(name_ok and hits == 2), int(name_ok), hits, 2, 1)


def test_extra_parameter_breaks_em_only():
    gold = ToolCall("order_pizza", {"crust": "thin"})
    m = grade_tool_use(ToolCall("order_pizza", {"crust": "thin", "size": 12}), gold)
    assert (m.em, m.value_hits, m.value_total) == (0, 1, 1)


@pytest.mark.parametrize(
    "a, b, same",
    [("  Thin ", "thin", True), ('"thin"', "thin", True), ("'Fried Chicken'", "fried chicken", True),
     (2, "2", True), ("2.0", 2, False), (True, "true", True), ([1, 2], "[1, 2]", True)],
)
def test_normalize_value(a, b, same):
    assert (normalize_value(a) == normalize_value(b)) is same


@pytest.mark.parametrize("case", STYLES, ids=[c["style"] for c in STYLES])
def test_tool_call_styles(case):
    got = extract_tool_call(ChatResponse.from_dict(case["response"]))
    assert (got.to_dict() if got else None) == case["expected"]


def test_aggregate_small_cases():
    one = ExtractionMetrics(1, 1.0, 1, 1, 0, 1, 0, 0)
    zero = ExtractionMetrics(0, 0.0, 1, 0, 0, 0, 1, 1)
    assert aggregate([one, zero]).aggregates["extraction"]["em"] == 50.0
    assert set(aggregate([one]).aggregates["extraction"].values()) == {100.0, 0.0}
    assert aggregate([one]).aggregates["extraction"]["format_error"] == 0.0
    perfect = ToolUseMetrics(1, 1, 2, 2, 1)
    assert set(aggregate([perfect]).aggregates["tooluse"].values()) == {100.0}
    with pytest.raises(ValueError):
        aggregate([])


def random_records(rng, n):
    out = []
    for _ in range(n):
        tp, fp, fn = rng.randint(0, 3), rng.randint(0, 3), rng.randint(0, 3)
        fmt = int(rng.random() < 0.15)
        ext = ExtractionMetrics(int(fp == fn == 0) * (1 - fmt), 0.0 if fmt else rng.random(),
                                rng.randint(0, 1) * (1 - fmt), rng.randint(0, 1) * (1 - fmt), fmt, tp, fp, fn)
        total = rng.randint(0, 3)
        made = rng.randint(0, 1)
        hits = rng.randint(0, total) * made
        tool = ToolUseMetrics(rng.randint(0, 1) * made, rng.randint(0, 1) * made, hits, total, made)
        out.append({"id": f"s{len(out)}", "extraction": asdict(ext), "tooluse": asdict(tool)})
    return out


def test_aggregate_matches_second_pass_oracle():
    rng = random.Random(50)
    records = random_records(rng, 50)
    agg = aggregate(records).aggregates
    for key in ("em", "f1", "no_hallucination", "coverage", "format_error"):
        assert agg["extraction"][key] == pytest.approx(mean_pct([r["extraction"][key] for r in records]), abs=1e-12)
    for key, field in (("em", "em"), ("tool_acc", "tool_acc"), ("tool_call_rate", "made_tool_call")):
        assert agg["tooluse"][key] == pytest.approx(mean_pct([r["tooluse"][field] for r in records]), abs=1e-12)
    hits = sum(r["tooluse"]["value_hits"] for r in records)
    total = sum(r["tooluse"]["value_total"] for r in records)
    assert agg["tooluse"]["value_acc"] == pytest.approx(100.0 * hits / total, abs=1e-12)


def test_write_report_is_deterministic(tmp_path):
    report = aggregate(random_records(random.Random(1), 10), {"mode": "golden"})
    write_report(report, tmp_path / "a")
    write_report(report, tmp_path / "b")
    for name in ("per_sample.jsonl", "summary.json", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    table = (tmp_path / "a" / "summary.txt").read_text()
    assert "mode: golden" in table and "No-Hal." in table and "Value Acc." in table
