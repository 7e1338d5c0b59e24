"""Rule-based grading of extracted sub-KGs and predicted tool calls."""

from __future__ import annotations

import ast
import json
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from kgetool.dataset import ToolCall
from kgetool.kg import KnowledgeGraph, Triple
from kgetool.llm import ChatResponse
from kgetool.search_parser import FormatError, ParsedSearches


@dataclass(frozen=True)
class ExtractionMetrics:
    em: int
    f1: float
    no_hallucination: int
    coverage: int
    format_error: int
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0


@dataclass(frozen=True)
class ToolUseMetrics:
    em: int
    tool_acc: int
    value_hits: int
    value_total: int
    made_tool_call: int

    @property
    def value_acc(self) -> float:
        return self.value_hits / self.value_total if self.value_total else 0.0


def set_f1(tp: int, fp: int, fn: int) -> float:
    # 2PR/(P+R) reduces to one division, which keeps the result correctly rounded.
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def grade_extraction(
    gold: Iterable[Triple],
    extracted: Iterable[Triple],
    parsed: ParsedSearches | FormatError | None,
    kg: KnowledgeGraph,
    gold_terminals: Iterable[str],
) -> ExtractionMetrics:
    """Score one sample's extracted link set against its gold link set.

    ``parsed=None`` marks extraction that involves no generated relation paths
    (the document-retrieval baseline): hallucination cannot occur there.
    Both link sets empty counts as an exact match with F1 = 1.
    """
    gold_set = set(gold)
    if isinstance(parsed, FormatError):
        return ExtractionMetrics(0, 0.0, 0, 0, 1, 0, 0, len(gold_set))

    got = set(extracted)
    tp = len(gold_set & got)
    fp = len(got - gold_set)
    fn = len(gold_set - got)
    em = int(fp == 0 and fn == 0)
    f1 = 1.0 if (em and not gold_set) else set_f1(tp, fp, fn)
    if parsed is None:
        no_hal = 1
    else:
        no_hal = int(all(r in kg.relation_vocab for r in parsed.relations))
    covered = {e for t in got for e in (t.head, t.tail)}
    coverage = int(set(gold_terminals) <= covered)
    return ExtractionMetrics(em, f1, no_hal, coverage, 0, tp, fp, fn)


# -- tool-call extraction ----------------------------------------------------

_THINK = re.compile(r"<think>.*?</think>", re.DOTALL | re.IGNORECASE)
_ARG_KEYS = ("parameters", "arguments")


def _as_call(obj: Any) -> ToolCall | None:
    """Depth-first search for the first ``{"name", "parameters"|"arguments"}`` object."""
    if isinstance(obj, Mapping):
        name = obj.get("name")
        if isinstance(name, str) and name and any(k in obj for k in _ARG_KEYS):
            params = next(obj[k] for k in _ARG_KEYS if k in obj)
            if isinstance(params, str):
                try:
                    params = json.loads(params) if params.strip() else {}
                except json.JSONDecodeError:
                    params = None
            if isinstance(params, Mapping):
                return ToolCall(name, dict(params))
        for value in obj.values():
            found = _as_call(value)
            if found:
                return found
    elif isinstance(obj, list):
        for item in obj:
            found = _as_call(item)
            if found:
                return found
    return None


def _balanced_span(text: str, start: int) -> str | None:
    depth, quote, escape = 0, "", False
    for i in range(start, len(text)):
        ch = text[i]
        if quote:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == quote:
                quote = ""
        elif ch in "\"'":
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _objects_in(text: str) -> Iterable[Any]:
    decoder = json.JSONDecoder()
    pos = 0
    while True:
        start = text.find("{", pos)
        if start < 0:
            return
        try:
            obj, end = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            span = _balanced_span(text, start)
            obj = None
            if span is not None:
                try:
                    obj = ast.literal_eval(span)
                except (ValueError, SyntaxError, MemoryError, RecursionError):
                    obj = None
            if obj is None:
                pos = start + 1
                continue
            end = start + len(span)
        yield obj
        pos = end


def extract_tool_call(response: ChatResponse) -> ToolCall | None:
    """The model's call, or None for a no-call (refusal, clarification question, ...).

    Native tool-call fields win. Otherwise the text, with any ``<think>`` block
    removed, is scanned for the first JSON (or Python-literal) object holding
    ``name`` plus ``parameters``/``arguments``.
    """
    if response.native_tool_calls:
        native = response.native_tool_calls[0]
        args: Any = native.arguments
        if isinstance(args, str):
            try:
                args = json.loads(args) if args.strip() else {}
            except json.JSONDecodeError:
                args = {}
        return ToolCall(native.name, dict(args) if isinstance(args, Mapping) else {})
    text = _THINK.sub("", response.text or "")
    for obj in _objects_in(text):
        call = _as_call(obj)
        if call:
            return call
    return None


# -- tool-use grading --------------------------------------------------------

def normalize_value(value: Any) -> str:
    """Trim, case-fold and strip one layer of surrounding quotes.

    Non-string values compare through their canonical JSON text, so ``2`` and
    ``"2"`` agree but ``"2.0"`` does not.
    """
    if not isinstance(value, str):
        value = json.dumps(value, sort_keys=True, ensure_ascii=False)
    s = value.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"":
        s = s[1:-1].strip()
    return s.casefold()


def grade_tool_use(pred: ToolCall | None, gold: ToolCall) -> ToolUseMetrics:
    total = len(gold.parameters)
    if pred is None:
        return ToolUseMetrics(0, 0, 0, total, 0)
    tool_acc = int(pred.name == gold.name)
    hits = sum(
        1
        for name, value in gold.parameters.items()
        if name in pred.parameters and normalize_value(pred.parameters[name]) == normalize_value(value)
    )
    pred_pairs = {(k, normalize_value(v)) for k, v in pred.parameters.items()}
    gold_pairs = {(k, normalize_value(v)) for k, v in gold.parameters.items()}
    em = int(bool(tool_acc) and pred_pairs == gold_pairs)
    return ToolUseMetrics(em, tool_acc, hits, total, 1)


# -- aggregation -------------------------------------------------------------

EXTRACTION_COLUMNS = (("em", "EM"), ("f1", "F1"), ("no_hallucination", "No-Hal."),
                      ("coverage", "Coverage"), ("format_error", "Format Error"))
TOOLUSE_COLUMNS = (("em", "EM"), ("tool_acc", "Tool Acc."), ("value_acc", "Value Acc."),
                   ("tool_call_rate", "Tool Call"))


def _pct(values: Sequence[float]) -> float:
    return 100.0 * sum(values) / len(values)


def aggregate_extraction(records: Sequence[ExtractionMetrics]) -> dict[str, float]:
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    return {key: _pct([getattr(r, key) for r in records]) for key, _ in EXTRACTION_COLUMNS}


def aggregate_tooluse(records: Sequence[ToolUseMetrics]) -> dict[str, float]:
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    hits = sum(r.value_hits for r in records)
    total = sum(r.value_total for r in records)
    return {
        "em": _pct([r.em for r in records]),
        "tool_acc": _pct([r.tool_acc for r in records]),
        "value_acc": 100.0 * hits / total if total else 0.0,
        "tool_call_rate": _pct([r.made_tool_call for r in records]),
    }


@dataclass
class EvalReport:
    """Per-sample records plus corpus means (percentages).

    ``per_sample`` entries are plain dicts; the ``extraction`` / ``tooluse``
    sub-dicts hold the metric fields the aggregates are computed from.
    """

    per_sample: list[dict[str, Any]]
    aggregates: dict[str, dict[str, float]]
    labels: dict[str, Any] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {"labels": self.labels, "samples": len(self.per_sample), "aggregates": self.aggregates}

    def table(self) -> str:
        return render_table(self.aggregates, self.labels)


def aggregate(
    records: Sequence[ExtractionMetrics | ToolUseMetrics | Mapping[str, Any]],
    labels: Mapping[str, Any] | None = None,
) -> EvalReport:
    """Aggregate metric records into an :class:`EvalReport`.

    Accepts bare :class:`ExtractionMetrics` / :class:`ToolUseMetrics` records or
    per-sample dicts carrying them (as dicts) under ``extraction``/``tooluse``.
    """
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    per_sample: list[dict[str, Any]] = []
    ext: list[ExtractionMetrics] = []
    tool: list[ToolUseMetrics] = []
    for r in records:
        if isinstance(r, ExtractionMetrics):
            ext.append(r)
            per_sample.append({"extraction": asdict(r)})
        elif isinstance(r, ToolUseMetrics):
            tool.append(r)
            per_sample.append({"tooluse": asdict(r)})
        else:
            if r.get("extraction") is not None:
                ext.append(ExtractionMetrics(**r["extraction"]))
            if r.get("tooluse") is not None:
                tool.append(ToolUseMetrics(**r["tooluse"]))
            per_sample.append(dict(r))
    aggregates: dict[str, dict[str, float]] = {}
    if ext:
        aggregates["extraction"] = aggregate_extraction(ext)
    if tool:
        aggregates["tooluse"] = aggregate_tooluse(tool)
    return EvalReport(per_sample, aggregates, dict(labels or {}))


def render_table(aggregates: Mapping[str, Mapping[str, float]], labels: Mapping[str, Any] | None = None) -> str:
    lines = []
    for label, value in (labels or {}).items():
        lines.append(f"{label}: {value}")
    for section, columns in (("extraction", EXTRACTION_COLUMNS), ("tooluse", TOOLUSE_COLUMNS)):
        if section not in aggregates:
            continue
        heads = [title for _, title in columns]
        cells = [f"{aggregates[section][key]:.2f}" for key, _ in columns]
        widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
        lines.append(f"[{section}]")
        lines.append(" | ".join(h.rjust(w) for h, w in zip(heads, widths)))
        lines.append(" | ".join(c.rjust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "per_sample.jsonl").open("w", encoding="utf-8") as f:
        for rec in report.per_sample:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    (out / "summary.json").write_text(
        json.dumps(report.summary(), ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "summary.txt").write_text(report.table(), encoding="utf-8")
