"""Two-step pipeline runs: relation-path extraction, then KG-augmented tool use.

Every run mode builds a different tool-use context:

``golden``       the sample's gold links
``extracted``    links grounded from the extraction model's KG.search output
``full_kg``      every triple of the KG
``documents``    links behind the top-n retrieved link documents
``true_values``  gold links and gold call with signal entities swapped for real values

Each sample yields a log of raw model outputs; metrics are always computed from
that log by :func:`grade_record`, so re-grading a finished run (:func:`grade_run`)
reproduces it exactly.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from kgetool.dataset import Sample, ToolCall, ToolDoc, gold_terminals
from kgetool.evaluator import (
    EvalReport,
    aggregate,
    aggregate_extraction,
    extract_tool_call,
    grade_extraction,
    grade_tool_use,
    write_report,
)
from kgetool.extraction import ExtractionConfig, ExtractionResult, extract_all
from kgetool.kg import GroundedPath, KnowledgeGraph, Triple, links_to_documents
from kgetool.llm import (
    ChatResponse,
    Gateway,
    PromptTemplate,
    ReplayMissError,
    render_path_prompt,
    render_tool_prompt,
)
from kgetool.search_parser import FormatError, ParsedSearches, parse_kg_search
from kgetool.similarity import SimilarityProvider, retrieve_documents

log = logging.getLogger(__name__)

MODES = ("golden", "extracted", "full_kg", "documents", "true_values")
SIGNAL_ENTITY = re.compile(r"[A-Za-z]+(?:_[A-Za-z]+)*_\d+")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    model: str
    base_url: str | None = None


@dataclass(frozen=True)
class RunConfig:
    mode: str = "extracted"
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    n_docs: int | None = None
    extraction_endpoint: EndpointConfig = field(default_factory=lambda: EndpointConfig("mock"))
    tooluse_endpoint: EndpointConfig = field(default_factory=lambda: EndpointConfig("mock"))
    value_map: Mapping[str, str] | None = None
    parallelism: int = 4
    seed: int = 0
    temperature: float = 0.7
    native_tools: bool = False
    similarity: Mapping[str, Any] = field(default_factory=lambda: {"backend": "lexical"})
    kg_path: str | None = None
    dataset_path: str | None = None
    tools_path: str | None = None
    replay: str | None = None
    path_template: str | None = None
    tool_template: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode == "documents" and (self.n_docs is None or self.n_docs < 1):
            raise ConfigError("documents mode needs n_docs >= 1")
        if self.mode == "true_values" and not self.value_map:
            raise ConfigError("true_values mode needs a value_map")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    def labels(self) -> dict[str, Any]:
        out: dict[str, Any] = {"mode": self.mode}
        if self.mode == "extracted":
            out["extraction_model"] = self.extraction_endpoint.model
            out["strategy"] = self.extraction.strategy
            if self.extraction.strategy == "relation_retrieval":
                out["k"] = self.extraction.k
        if self.mode == "documents":
            out["n_docs"] = self.n_docs
        out["tooluse_model"] = self.tooluse_endpoint.model
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "extraction": asdict(self.extraction),
            "n_docs": self.n_docs,
            "endpoints": {
                "extraction": asdict(self.extraction_endpoint),
                "tooluse": asdict(self.tooluse_endpoint),
            },
            "value_map": dict(self.value_map) if self.value_map else None,
            "parallelism": self.parallelism,
            "seed": self.seed,
            "temperature": self.temperature,
            "native_tools": self.native_tools,
            "similarity": dict(self.similarity),
            "paths": {"kg": self.kg_path, "dataset": self.dataset_path, "tools": self.tools_path},
            "replay": self.replay,
            "templates": {"path": self.path_template, "tool": self.tool_template},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunConfig:
        known = {"mode", "extraction", "n_docs", "endpoints", "value_map", "parallelism", "seed",
                 "temperature", "native_tools", "similarity", "paths", "replay", "templates"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s) {unknown}")
        try:
            endpoints = data.get("endpoints") or {}
            paths = data.get("paths") or {}
            templates = data.get("templates") or {}
            value_map = data.get("value_map")
            if isinstance(value_map, str):
                value_map = json.loads(Path(value_map).read_text(encoding="utf-8"))
            return cls(
                mode=data.get("mode", "extracted"),
                extraction=ExtractionConfig(**(data.get("extraction") or {})),
                n_docs=data.get("n_docs"),
                extraction_endpoint=EndpointConfig(**endpoints.get("extraction", {"model": "mock"})),
                tooluse_endpoint=EndpointConfig(**endpoints.get("tooluse", {"model": "mock"})),
                value_map=value_map,
                parallelism=int(data.get("parallelism", 4)),
                seed=int(data.get("seed", 0)),
                temperature=float(data.get("temperature", 0.7)),
                native_tools=bool(data.get("native_tools", False)),
                similarity=dict(data.get("similarity") or {"backend": "lexical"}),
                kg_path=paths.get("kg"),
                dataset_path=paths.get("dataset"),
                tools_path=paths.get("tools"),
                replay=data.get("replay"),
                path_template=templates.get("path"),
                tool_template=templates.get("tool"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, OSError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def with_overrides(self, **changes: Any) -> RunConfig:
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def signal_entities(kg: KnowledgeGraph) -> set[str]:
    """Placeholder preference values such as ``food_0000``."""
    return {e for e in kg.entity_set if SIGNAL_ENTITY.fullmatch(e)}


def check_value_map(value_map: Mapping[str, str], kg: KnowledgeGraph) -> None:
    missing = sorted(signal_entities(kg) - value_map.keys())
    if missing:
        raise ConfigError(f"value_map misses {len(missing)} signal entit(ies), e.g. {missing[:5]}")


# -- context rendering --------------------------------------------------------

def render_links(links: Sequence[Triple]) -> str:
    return ", ".join(f"[{t.head}, {t.relation}, {t.tail}]" for t in links)


@dataclass(frozen=True)
class AugmentedQuery:
    base_query: str
    paths: tuple[GroundedPath, ...]
    rendered: str

    @property
    def links(self) -> list[Triple]:
        return [t for p in self.paths for t in p.links]


def build_augmented_query(base_query: str, paths: Sequence[GroundedPath]) -> AugmentedQuery:
    paths = tuple(paths)
    links = [t for p in paths for t in p.links]
    if not links:
        return AugmentedQuery(base_query, paths, base_query)
    rendered = f"{base_query}. The extra information for this query is ({render_links(links)})."
    return AugmentedQuery(base_query, paths, rendered)


def map_values(value_map: Mapping[str, str], paths: Sequence[GroundedPath]) -> list[GroundedPath]:
    def sub(e: str) -> str:
        return value_map.get(e, e)

    return [GroundedPath(tuple(Triple(sub(t.head), t.relation, sub(t.tail)) for t in p.links)) for p in paths]


def map_call(value_map: Mapping[str, str], call: ToolCall) -> ToolCall:
    params = {k: value_map.get(v, v) if isinstance(v, str) else v for k, v in call.parameters.items()}
    return ToolCall(call.name, params)


# -- pipeline steps -------------------------------------------------------------

@dataclass(frozen=True)
class ExtractionStep:
    raw_text: str | None
    parsed: ParsedSearches | FormatError
    result: ExtractionResult | None
    error: str | None = None
    messages: tuple = ()


def run_extraction_step(
    sample: Sample,
    kg: KnowledgeGraph,
    config: RunConfig,
    gateway: Gateway,
    sim: SimilarityProvider | None = None,
    template: PromptTemplate | None = None,
) -> ExtractionStep:
    """Prompt for KG.search paths, parse them, and ground them with the configured strategy.

    Gateway failures become a :class:`FormatError` outcome for this sample;
    only replay misses propagate (they mean the run is misconfigured).
    """
    messages = render_path_prompt(kg, sample.prompt_text, template)
    try:
        response = gateway.complete(gateway.request(messages))
    except ReplayMissError:
        raise
    except Exception as exc:  # noqa: BLE001 - per-sample isolation
        log.warning("extraction call failed for sample %s: %s", sample.id, exc)
        error = f"{type(exc).__name__}: {exc}"
        return ExtractionStep(None, FormatError("", f"gateway error: {error}"), None, error, tuple(messages))
    text = response.text or ""
    parsed = parse_kg_search(text)
    if isinstance(parsed, FormatError):
        return ExtractionStep(text, parsed, None, None, tuple(messages))
    result = extract_all(kg, parsed.searches, config.extraction, sim)
    return ExtractionStep(text, parsed, result, None, tuple(messages))


@dataclass(frozen=True)
class ToolUseStep:
    augmented: AugmentedQuery
    response: ChatResponse | None
    call: ToolCall | None
    error: str | None = None
    messages: tuple = ()


def candidate_tools(sample: Sample, tools: Mapping[str, ToolDoc]) -> list[ToolDoc]:
    if sample.candidate_tools is None:
        return list(tools.values())
    return [tools[name] for name in sample.candidate_tools if name in tools]


def run_tooluse_step(
    sample: Sample,
    context: Sequence[GroundedPath],
    tools: Mapping[str, ToolDoc],
    config: RunConfig,
    gateway: Gateway,
    template: PromptTemplate | None = None,
) -> ToolUseStep:
    augmented = build_augmented_query(sample.prompt_text, context)
    docs = candidate_tools(sample, tools)
    messages = render_tool_prompt(augmented, docs, template)
    native = [d.to_openai_tool() for d in docs] if config.native_tools else None
    try:
        response = gateway.complete(gateway.request(messages, native))
    except ReplayMissError:
        raise
    except Exception as exc:  # noqa: BLE001 - per-sample isolation
        log.warning("tool-use call failed for sample %s: %s", sample.id, exc)
        return ToolUseStep(augmented, None, None, f"{type(exc).__name__}: {exc}", tuple(messages))
    return ToolUseStep(augmented, response, extract_tool_call(response), None, tuple(messages))


# -- grading of logged outputs ---------------------------------------------------

def _links_json(links) -> list[list[str]]:
    return [t.as_list() for t in sorted(set(links))]


def _links_from_json(rows) -> list[Triple]:
    return [Triple(*row) for row in rows]


def grade_record(
    sample: Sample,
    kg: KnowledgeGraph,
    mode: str,
    entry: Mapping[str, Any],
    value_map: Mapping[str, str] | None = None,
) -> dict[str, Any]:
    """Metrics for one sample, computed only from its logged raw outputs."""
    extraction = None
    if mode == "extracted":
        if entry.get("extraction_error"):
            parsed: ParsedSearches | FormatError | None = FormatError("", "gateway error")
        else:
            parsed = parse_kg_search(entry.get("extraction_output") or "")
        extracted = _links_from_json(entry.get("extracted_links") or [])
        extraction = grade_extraction(sample.gold_links, extracted, parsed, kg, gold_terminals(sample, kg))
    elif mode == "documents":
        extracted = _links_from_json(entry.get("extracted_links") or [])
        extraction = grade_extraction(sample.gold_links, extracted, None, kg, gold_terminals(sample, kg))

    gold_call = sample.gold_call
    if mode == "true_values" and value_map:
        gold_call = map_call(value_map, gold_call)
    raw = entry.get("tooluse_output")
    pred = extract_tool_call(ChatResponse.from_dict(raw)) if raw and not entry.get("tooluse_error") else None
    tooluse = grade_tool_use(pred, gold_call)
    return {
        "id": sample.id,
        "extraction": asdict(extraction) if extraction else None,
        "tooluse": asdict(tooluse),
        "predicted_call": pred.to_dict() if pred else None,
    }


# -- corpus runs ------------------------------------------------------------------

@dataclass
class _RunContext:
    kg: KnowledgeGraph
    tools: Mapping[str, ToolDoc]
    config: RunConfig
    extraction_gateway: Gateway | None
    tooluse_gateway: Gateway
    sim: SimilarityProvider | None
    path_template: PromptTemplate | None
    tool_template: PromptTemplate | None
    documents: list = field(default_factory=list)


def _run_sample(sample: Sample, ctx: _RunContext) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    cfg = ctx.config
    entry: dict[str, Any] = {}
    io: list[dict[str, Any]] = []

    if cfg.mode in ("golden", "true_values"):
        context = sample.gold_paths()
        if cfg.mode == "true_values":
            context = map_values(cfg.value_map, context)
    elif cfg.mode == "full_kg":
        context = [GroundedPath((t,)) for t in ctx.kg.sorted_triples()]
    elif cfg.mode == "documents":
        docs = retrieve_documents(sample.retrieval_text, ctx.documents, cfg.n_docs, ctx.sim)
        context = [GroundedPath((d.source_triple,)) for d in docs]
        entry["retrieved_documents"] = [d.id for d in docs]
        entry["extracted_links"] = _links_json(d.source_triple for d in docs)
    else:
        step = run_extraction_step(sample, ctx.kg, cfg, ctx.extraction_gateway, ctx.sim, ctx.path_template)
        entry["extraction_output"] = step.raw_text
        entry["extraction_error"] = step.error
        if isinstance(step.parsed, ParsedSearches):
            entry["searches"] = [[p.start, list(p.relations)] for p in step.parsed.searches]
        else:
            entry["format_error"] = step.parsed.reason
        if step.result is not None:
            entry["extracted_links"] = _links_json(step.result.links)
            entry["candidate_count"] = step.result.candidate_count_pre_filter
            entry["fake_relation_count"] = step.result.fake_relation_count
            entry["truncated"] = step.result.truncated
            context = step.result.sorted_paths()
        else:
            entry["extracted_links"] = []
            context = []
        io.append({"id": sample.id, "step": "extraction",
                   "messages": [m.to_dict() for m in step.messages],
                   "output": step.raw_text, "error": step.error})

    tstep = run_tooluse_step(sample, context, ctx.tools, cfg, ctx.tooluse_gateway, ctx.tool_template)
    entry["context_links"] = [t.as_list() for t in tstep.augmented.links]
    entry["tooluse_output"] = tstep.response.to_dict() if tstep.response else None
    entry["tooluse_error"] = tstep.error
    io.append({"id": sample.id, "step": "tooluse",
               "messages": [m.to_dict() for m in tstep.messages],
               "output": entry["tooluse_output"], "error": tstep.error})

    graded = grade_record(sample, ctx.kg, cfg.mode, entry, cfg.value_map)
    record = {"id": sample.id, "mode": cfg.mode, **{k: v for k, v in graded.items() if k != "id"}, "log": entry}
    return record, io


def run_corpus(
    samples: Sequence[Sample],
    kg: KnowledgeGraph,
    tools: Mapping[str, ToolDoc],
    config: RunConfig,
    *,
    tooluse_gateway: Gateway,
    extraction_gateway: Gateway | None = None,
    sim: SimilarityProvider | None = None,
    path_template: PromptTemplate | None = None,
    tool_template: PromptTemplate | None = None,
    out_dir: str | Path | None = None,
) -> EvalReport:
    """Run every sample through the configured mode and aggregate.

    Samples run on a pool of ``config.parallelism`` workers; records come back
    in input order. With ``out_dir`` the config snapshot, raw model I/O,
    per-sample records and summaries are written there.
    """
    if not samples:
        raise ConfigError("no samples to run")
    if config.mode == "extracted" and extraction_gateway is None:
        raise ConfigError("extracted mode needs an extraction gateway")
    if config.mode == "extracted" and config.extraction.strategy == "relation_retrieval" and sim is None:
        raise ConfigError("relation_retrieval needs a similarity provider")
    if config.mode == "documents" and sim is None:
        raise ConfigError("documents mode needs a similarity provider")
    if config.mode == "true_values":
        check_value_map(config.value_map, kg)

    ctx = _RunContext(kg, tools, config, extraction_gateway, tooluse_gateway, sim, path_template, tool_template)
    if config.mode == "documents":
        ctx.documents = links_to_documents(kg)

    if config.parallelism == 1:
        outputs = [_run_sample(s, ctx) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            outputs = list(pool.map(lambda s: _run_sample(s, ctx), samples))
    records = [rec for rec, _ in outputs]
    report = aggregate(records, labels=config.labels())

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps(config.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        with (out / "raw_io.jsonl").open("w", encoding="utf-8") as f:
            for _, io in outputs:
                for row in io:
                    f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        write_report(report, out)
    return report


def extract_corpus(
    samples: Sequence[Sample],
    kg: KnowledgeGraph,
    config: RunConfig,
    gateway: Gateway,
    sim: SimilarityProvider | None = None,
    path_template: PromptTemplate | None = None,
) -> EvalReport:
    """Extraction step only, graded with the extraction metrics."""
    if not samples:
        raise ConfigError("no samples to run")

    def one(sample: Sample) -> dict[str, Any]:
        step = run_extraction_step(sample, kg, config, gateway, sim, path_template)
        links = sorted(step.result.links) if step.result else []
        metrics = grade_extraction(sample.gold_links, links, step.parsed, kg, gold_terminals(sample, kg))
        return {
            "id": sample.id,
            "extraction": asdict(metrics),
            "log": {
                "extraction_output": step.raw_text,
                "extraction_error": step.error,
                "extracted_links": _links_json(links),
            },
        }

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        records = list(pool.map(one, samples))
    labels = {"mode": "extraction_only", "extraction_model": config.extraction_endpoint.model,
              "strategy": config.extraction.strategy}
    return aggregate(records, labels=labels)


def read_records(run_dir: str | Path) -> list[dict[str, Any]]:
    with (Path(run_dir) / "per_sample.jsonl").open(encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def grade_run(run_dir: str | Path, samples: Sequence[Sample], kg: KnowledgeGraph) -> EvalReport:
    """Re-grade a finished run from its logged outputs (no model or retriever calls)."""
    config = RunConfig.from_file(Path(run_dir) / "config.json")
    by_id = {s.id: s for s in samples}
    records = []
    for rec in read_records(run_dir):
        sample = by_id.get(rec["id"])
        if sample is None:
            raise ConfigError(f"logged sample {rec['id']!r} is not in the dataset")
        graded = grade_record(sample, kg, rec["mode"], rec["log"], config.value_map)
        records.append({"id": sample.id, "mode": rec["mode"],
                        **{k: v for k, v in graded.items() if k != "id"}, "log": rec["log"]})
    return aggregate(records, labels=config.labels())


# -- document-retrieval baseline --------------------------------------------------

def docs_baseline(
    samples: Sequence[Sample],
    kg: KnowledgeGraph,
    sim: SimilarityProvider,
    ns: Sequence[int] = tuple(range(1, 11)),
) -> list[dict[str, Any]]:
    """Extraction metrics of top-n link-document retrieval, for each n in ``ns``.

    Each sample's corpus ranking is computed once and cut at every n.
    """
    if not samples:
        raise ConfigError("no samples for the documents baseline")
    if any(n < 1 for n in ns):
        raise ConfigError("document counts must be >= 1")
    docs = links_to_documents(kg)
    texts = [d.text for d in docs]
    rankings = [[i for i, _ in sim.rank(s.retrieval_text, texts)] for s in samples]
    series = []
    for n in ns:
        metrics = []
        for s, ranking in zip(samples, rankings):
            links = [docs[i].source_triple for i in ranking[:n]]
            metrics.append(grade_extraction(s.gold_links, links, None, kg, gold_terminals(s, kg)))
        series.append({"n": n, **aggregate_extraction(metrics)})
    return series
