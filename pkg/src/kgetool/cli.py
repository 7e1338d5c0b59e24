"""``kgetool`` command line.

Subcommands: ``validate``, ``extract``, ``tooluse``, ``run``, ``grade``, ``docs-baseline``.
Data files come from ``--kg/--dataset/--tools``, else the config's ``paths``
block, else (with ``--fixtures``) the bundled fixture corpus.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from kgetool import fixtures
from kgetool.dataset import (
    PUBLISHED_STATS,
    DatasetError,
    examine_call,
    load_dataset,
    load_tools,
    summarize,
    validate_against_kg,
)
from kgetool.evaluator import aggregate, extract_tool_call, grade_tool_use, render_table, write_report
from kgetool.extraction import ExtractionConfig
from kgetool.harness import (
    MODES,
    ConfigError,
    EndpointConfig,
    RunConfig,
    docs_baseline,
    extract_corpus,
    grade_run,
    map_call,
    run_corpus,
)
from kgetool.kg import KGParseError, load_kg_file
from kgetool.llm import (
    ChatResponse,
    Gateway,
    GatewayError,
    HTTPChatBackend,
    PromptTemplate,
    RecordingBackend,
    ReplayBackend,
    ReplayStore,
)
from kgetool.similarity import ProviderError, make_provider

log = logging.getLogger("kgetool")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--extraction-model", help="model name for the extraction step")
    p.add_argument("--tooluse-model", help="model name for the tool-use step")
    p.add_argument("--extraction-url", help="chat endpoint base URL for the extraction step")
    p.add_argument("--tooluse-url", help="chat endpoint base URL for the tool-use step")
    p.add_argument("--replay", help="replay store (JSON lines); answers every request from it")
    p.add_argument("--record", help="append live responses to this replay store")
    p.add_argument("--out", help="output directory")
    p.add_argument("--kg", help="triple file (JSON array or TSV)")
    p.add_argument("--dataset", help="dataset file")
    p.add_argument("--tools", help="tool documents file")
    p.add_argument("--fixtures", action="store_true", help="use the bundled fixture corpus")
    p.add_argument("--strategy", choices=("exact", "greedy_search", "relation_retrieval"))
    p.add_argument("--k", type=int, help="top-k for relation retrieval")
    p.add_argument("--n-docs", type=int, help="documents per query (documents mode)")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--value-map", help="JSON map signal entity -> real value (true_values mode)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="kgetool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="dataset vs KG checks and statistics")
    v.add_argument("--expect", choices=sorted(PUBLISHED_STATS), help="compare with published statistics")

    sub.add_parser("extract", parents=[common], help="run the extraction step only")

    t = sub.add_parser("tooluse", parents=[common], help="grade a file of tool-use model outputs")
    t.add_argument("--calls", required=True,
                   help="JSON lines {id, output}; output is text or a response object")

    sub.add_parser("run", parents=[common], help="end-to-end pipeline run")

    g = sub.add_parser("grade", parents=[common], help="re-grade a finished run offline")
    g.add_argument("--run-dir", required=True)
    g.add_argument("--check", action="store_true", help="exit 1 unless aggregates equal the logged summary")

    d = sub.add_parser("docs-baseline", parents=[common], help="coverage vs number of retrieved documents")
    d.add_argument("--max-n", type=int, default=10)
    return parser


# -- helpers ----------------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else None
    base = cfg.to_dict() if cfg else {}
    if args.mode:
        base["mode"] = args.mode
    ext = dict(base.get("extraction") or {})
    if args.strategy:
        ext["strategy"] = args.strategy
    if args.k is not None:
        ext["k"] = args.k
    base["extraction"] = ext
    if args.n_docs is not None:
        base["n_docs"] = args.n_docs
    if args.parallelism is not None:
        base["parallelism"] = args.parallelism
    if args.value_map:
        base["value_map"] = args.value_map
    if args.replay:
        base["replay"] = args.replay
    endpoints = base.setdefault("endpoints", {})
    for step, model, url in (("extraction", args.extraction_model, args.extraction_url),
                             ("tooluse", args.tooluse_model, args.tooluse_url)):
        ep = dict(endpoints.get(step) or {"model": "mock"})
        if model:
            ep["model"] = model
        if url:
            ep["base_url"] = url
        endpoints[step] = ep
    paths = dict(base.get("paths") or {})
    for key in ("kg", "dataset", "tools"):
        if getattr(args, key):
            paths[key] = getattr(args, key)
        elif args.fixtures and not paths.get(key):
            name = {"kg": "family_kg.json", "dataset": "dataset.json", "tools": "tools.json"}[key]
            paths[key] = str(fixtures.fixture_path(name))
    base["paths"] = paths
    if args.fixtures and args.mode == "true_values" and not base.get("value_map"):
        base["value_map"] = str(fixtures.fixture_path("value_map.json"))
    return RunConfig.from_dict(base)


def _require(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError(f"no {what} file given (use --{what}, a config 'paths' entry, or --fixtures)")
    return path


def _gateway(endpoint: EndpointConfig, cfg: RunConfig, record: str | None) -> Gateway:
    if cfg.replay:
        if not Path(cfg.replay).exists():
            raise ConfigError(f"replay store {cfg.replay} does not exist")
        backend = ReplayBackend(cfg.replay)
    elif endpoint.base_url:
        backend = HTTPChatBackend(endpoint.base_url)
        if record:
            backend = RecordingBackend(backend, ReplayStore(record))
    else:
        raise ConfigError(f"model {endpoint.model!r} has neither a base_url nor a replay store")
    return Gateway(backend, endpoint.model, max_concurrency=cfg.parallelism, temperature=cfg.temperature)


def _templates(cfg: RunConfig):
    path_t = PromptTemplate.from_file(cfg.path_template) if cfg.path_template else None
    tool_t = PromptTemplate.from_file(cfg.tool_template) if cfg.tool_template else None
    return path_t, tool_t


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# -- subcommands -------------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = _config(args)
    kg = load_kg_file(_require(cfg.kg_path, "kg"))
    samples = load_dataset(_require(cfg.dataset_path, "dataset"))
    tools = load_tools(_require(cfg.tools_path, "tools")) if cfg.tools_path else {}
    summary = summarize(samples, tools, kg)
    report = validate_against_kg(samples, kg)

    lines = [
        f"samples: {summary.samples}",
        f"tools: {summary.tools}",
        f"kg: nodes={summary.kg.nodes} edges={summary.kg.edges} edge_types={summary.kg.edge_types}",
        "hop histogram: " + json.dumps(summary.hops),
        f"kg validation: {len(report.flags)} flag(s) over {report.checked} sample(s)",
    ]
    for flag in report.flags[:20]:
        lines.append(f"  {flag.sample_id}: {flag.kind}: {flag.detail}")
    bad_calls = []
    if tools:
        for s in samples:
            doc = tools.get(s.tool_name)
            check = examine_call(s.gold_call, doc) if doc else None
            if check is None or not check.ok:
                bad_calls.append((s.id, check.problems if check else ("tool not in tools file",)))
        lines.append(f"gold-call examination: {len(samples) - len(bad_calls)}/{len(samples)} pass")
        for sid, problems in bad_calls[:20]:
            lines.append(f"  {sid}: {'; '.join(problems)}")

    status = 0
    if args.expect:
        expected = PUBLISHED_STATS[args.expect]
        checks = [("samples", summary.samples, expected.samples), ("tools", summary.tools, expected.tools),
                  ("kg", summary.kg, expected.kg), ("hops", summary.hops, expected.hops)]
        for name, got, want in checks:
            ok = got == want
            status |= not ok
            lines.append(f"{'PASS' if ok else 'FAIL'} {args.expect} {name}: got {got}, expected {want}")
    _emit("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"summary": summary.to_dict(),
                   "flags": [f.__dict__ for f in report.flags],
                   "bad_calls": [{"id": sid, "problems": list(p)} for sid, p in bad_calls]}
        (out / "validation.json").write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return status


def cmd_extract(args) -> int:
    cfg = _config(args)
    kg = load_kg_file(_require(cfg.kg_path, "kg"))
    samples = load_dataset(_require(cfg.dataset_path, "dataset"))
    sim = make_provider(cfg.similarity)
    path_t, _ = _templates(cfg)
    report = extract_corpus(samples, kg, cfg, _gateway(cfg.extraction_endpoint, cfg, args.record), sim, path_t)
    _emit(report.table())
    if args.out:
        write_report(report, args.out)
    return 0


def _response_from(output) -> ChatResponse:
    if isinstance(output, dict):
        if "choices" in output:
            return ChatResponse.from_openai(output)
        return ChatResponse.from_dict(output)
    return ChatResponse(text=str(output))


def cmd_tooluse(args) -> int:
    cfg = _config(args)
    samples = {s.id: s for s in load_dataset(_require(cfg.dataset_path, "dataset"))}
    records = []
    with open(args.calls, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            sample = samples.get(str(row.get("id")))
            if sample is None:
                raise ConfigError(f"{args.calls}:{lineno}: unknown sample id {row.get('id')!r}")
            gold = map_call(cfg.value_map, sample.gold_call) if cfg.value_map else sample.gold_call
            output = row.get("output")
            pred = extract_tool_call(_response_from(output)) if output is not None else None
            records.append({"id": sample.id, "tooluse": grade_tool_use(pred, gold).__dict__,
                            "predicted_call": pred.to_dict() if pred else None})
    report = aggregate(records, labels={"mode": "tooluse_only", "calls": args.calls})
    _emit(report.table())
    if args.out:
        write_report(report, args.out)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    kg = load_kg_file(_require(cfg.kg_path, "kg"))
    samples = load_dataset(_require(cfg.dataset_path, "dataset"))
    tools = load_tools(_require(cfg.tools_path, "tools"))
    needs_sim = cfg.mode == "documents" or (cfg.mode == "extracted" and cfg.extraction.strategy == "relation_retrieval")
    sim = make_provider(cfg.similarity) if needs_sim else None
    path_t, tool_t = _templates(cfg)
    ext_gw = _gateway(cfg.extraction_endpoint, cfg, args.record) if cfg.mode == "extracted" else None
    report = run_corpus(
        samples, kg, tools, cfg,
        extraction_gateway=ext_gw,
        tooluse_gateway=_gateway(cfg.tooluse_endpoint, cfg, args.record),
        sim=sim, path_template=path_t, tool_template=tool_t, out_dir=args.out,
    )
    _emit(report.table())
    return 0


def cmd_grade(args) -> int:
    run_dir = Path(args.run_dir)
    snapshot = RunConfig.from_file(run_dir / "config.json")
    kg_path = args.kg or snapshot.kg_path
    ds_path = args.dataset or snapshot.dataset_path
    if args.fixtures:
        kg_path = kg_path or str(fixtures.fixture_path("family_kg.json"))
        ds_path = ds_path or str(fixtures.fixture_path("dataset.json"))
    kg = load_kg_file(_require(kg_path, "kg"))
    samples = load_dataset(_require(ds_path, "dataset"))
    report = grade_run(run_dir, samples, kg)
    _emit(report.table())
    if args.out:
        write_report(report, args.out)
    if args.check:
        logged = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))["aggregates"]
        if logged != report.aggregates:
            _emit("FAIL re-graded aggregates differ from the logged summary")
            return 1
        _emit("PASS re-graded aggregates equal the logged summary")
    return 0


def cmd_docs_baseline(args) -> int:
    cfg = _config(args)
    kg = load_kg_file(_require(cfg.kg_path, "kg"))
    samples = load_dataset(_require(cfg.dataset_path, "dataset"))
    series = docs_baseline(samples, kg, make_provider(cfg.similarity), range(1, args.max_n + 1))
    rows = ["n\tem\tf1\tcoverage"]
    rows += [f"{p['n']}\t{p['em']:.2f}\t{p['f1']:.2f}\t{p['coverage']:.2f}" for p in series]
    _emit("\n".join(rows))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "docs_baseline.json").write_text(json.dumps(series, indent=2) + "\n", encoding="utf-8")
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "extract": cmd_extract,
    "tooluse": cmd_tooluse,
    "run": cmd_run,
    "grade": cmd_grade,
    "docs-baseline": cmd_docs_baseline,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError, KGParseError, GatewayError, ProviderError, OSError, ValueError) as exc:
        sys.stderr.write(f"kgetool {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
