"""Benchmark samples, tool documents, and the machine-checkable data examination rules."""

from __future__ import annotations

import json
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from kgetool.kg import GroundedPath, KnowledgeGraph, KGStats, Triple


class DatasetError(ValueError):
    """Schema problem in a dataset or tools file; ``index`` locates the record."""

    def __init__(self, message: str, index: int | None = None) -> None:
        where = f"sample {index}: " if index is not None else ""
        super().__init__(where + message)
        self.index = index


class LinkAnnotationError(DatasetError):
    pass


# -- tools -----------------------------------------------------------------

_TYPE_ALIASES = {
    "str": "string", "string": "string", "text": "string",
    "int": "integer", "integer": "integer",
    "float": "number", "number": "number", "double": "number",
    "bool": "boolean", "boolean": "boolean",
    "list": "array", "array": "array",
    "dict": "object", "object": "object",
}


@dataclass(frozen=True)
class ToolParameter:
    name: str
    type: str = "string"
    required: bool = False
    enum: tuple[Any, ...] | None = None
    description: str = ""


@dataclass(frozen=True)
class ToolDoc:
    name: str
    description: str
    parameters: tuple[ToolParameter, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "parameters", tuple(self.parameters))
        names = [p.name for p in self.parameters]
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        if dupes:
            raise DatasetError(f"tool {self.name!r} repeats parameter(s) {dupes}")

    @property
    def required(self) -> set[str]:
        return {p.name for p in self.parameters if p.required}

    def parameter(self, name: str) -> ToolParameter | None:
        for p in self.parameters:
            if p.name == name:
                return p
        return None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ToolDoc:
        """Accept either a JSON-schema style document or the flat parameter list.

        JSON-schema style: ``{"name", "description", "parameters": {"type": "object",
        "properties": {...}, "required": [...]}}``; an OpenAI ``{"type": "function",
        "function": {...}}`` wrapper is unwrapped.
        """
        if "function" in data and isinstance(data["function"], Mapping):
            data = data["function"]
        if "name" not in data:
            raise DatasetError("tool document without a name")
        raw = data.get("parameters") or {}
        params: list[ToolParameter] = []
        if isinstance(raw, Mapping):
            required = set(raw.get("required") or [])
            for pname, spec in (raw.get("properties") or {}).items():
                spec = spec if isinstance(spec, Mapping) else {}
                enum = spec.get("enum")
                params.append(
                    ToolParameter(
                        name=pname,
                        type=str(spec.get("type", "string")),
                        required=pname in required,
                        enum=tuple(enum) if enum is not None else None,
                        description=str(spec.get("description", "")),
                    )
                )
        elif isinstance(raw, list):
            for spec in raw:
                enum = spec.get("enum")
                params.append(
                    ToolParameter(
                        name=spec["name"],
                        type=str(spec.get("type", "string")),
                        required=bool(spec.get("required", False)),
                        enum=tuple(enum) if enum is not None else None,
                        description=str(spec.get("description", "")),
                    )
                )
        else:
            raise DatasetError(f"tool {data['name']!r}: unsupported parameters block")
        return cls(str(data["name"]), str(data.get("description", "")), tuple(params))

    def to_schema(self) -> dict[str, Any]:
        """JSON-schema style document, as shown to models."""
        props: dict[str, Any] = {}
        for p in self.parameters:
            spec: dict[str, Any] = {"type": p.type}
            if p.description:
                spec["description"] = p.description
            if p.enum is not None:
                spec["enum"] = list(p.enum)
            props[p.name] = spec
        return {
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": props,
                "required": [p.name for p in self.parameters if p.required],
            },
        }

    def to_openai_tool(self) -> dict[str, Any]:
        return {"type": "function", "function": self.to_schema()}


def load_tools(source: str | Path | Sequence[Mapping[str, Any]]) -> dict[str, ToolDoc]:
    """Tool documents keyed by name, from a JSON file path or already-decoded list."""
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        data = source
    if isinstance(data, Mapping):
        data = list(data.values())
    tools: dict[str, ToolDoc] = {}
    for i, item in enumerate(data):
        doc = ToolDoc.from_dict(item)
        if doc.name in tools:
            raise DatasetError(f"duplicate tool {doc.name!r} at position {i}")
        tools[doc.name] = doc
    return tools


@dataclass(frozen=True)
class ToolCall:
    """A tool invocation. Parameter values keep their JSON types."""

    name: str
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "parameters": dict(self.parameters)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ToolCall:
        params = data.get("parameters", data.get("arguments", {}))
        if isinstance(params, str):
            params = json.loads(params) if params.strip() else {}
        if not isinstance(params, Mapping):
            raise DatasetError(f"tool call parameters must be an object, got {type(params).__name__}")
        return cls(str(data["name"]), dict(params))


# -- samples ---------------------------------------------------------------

_SPEAKER = re.compile(r"^\s*<speak>\s*Speaker\s*:\s*(.*?)\s*</speak>\s*", re.IGNORECASE | re.DOTALL)
_LINK_ITEM = re.compile(r"\[([^\[\]]*)\]")
_EXTRA_INFO = re.compile(r"\s*The extra information for (?:this|the) query is\s*$", re.IGNORECASE)


def _strip_quotes(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"":
        return s[1:-1].strip()
    return s


def parse_link_annotation(body: str) -> list[Triple]:
    """``[a, r, b], [b, r2, c]`` -> triples. ``body`` excludes the outer parentheses."""
    links = []
    pos = 0
    for m in _LINK_ITEM.finditer(body):
        gap = body[pos : m.start()]
        if gap.strip(" \t\n,"):
            raise LinkAnnotationError(f"unexpected text {gap.strip()!r} in link annotation")
        fields = [_strip_quotes(f) for f in m.group(1).split(",")]
        if len(fields) != 3 or not all(fields):
            raise LinkAnnotationError(f"link {m.group()!r} is not a (head, relation, tail) triple")
        links.append(Triple(*fields))
        pos = m.end()
    if body[pos:].strip(" \t\n,"):
        raise LinkAnnotationError(f"unexpected text {body[pos:].strip()!r} in link annotation")
    return links


def split_question(question: str) -> tuple[str, str, list[Triple]]:
    """Split a raw question into (speaker, query text, gold links).

    The speaker comes from a leading ``<speak>Speaker: X</speak>`` tag and the
    links from the trailing parenthesized triple list, optionally introduced by
    "The extra information for the query is".
    """
    m = _SPEAKER.match(question)
    if not m:
        raise DatasetError("question has no <speak>Speaker: ...</speak> prefix")
    speaker, rest = m.group(1), question[m.end():]
    text = rest.rstrip().rstrip(".").rstrip()
    if not text.endswith(")"):
        raise LinkAnnotationError("question does not end with a parenthesized link annotation")
    depth = 0
    for i in range(len(text) - 1, -1, -1):
        if text[i] == ")":
            depth += 1
        elif text[i] == "(":
            depth -= 1
            if depth == 0:
                break
    else:
        raise LinkAnnotationError("unbalanced parentheses in link annotation")
    links = parse_link_annotation(text[i + 1 : -1])
    query = _EXTRA_INFO.sub("", text[:i]).strip()
    return speaker, query, links


@dataclass(frozen=True)
class Sample:
    id: str
    speaker: str
    query: str
    gold_links: tuple[Triple, ...]
    gold_call: ToolCall
    candidate_tools: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_links", tuple(self.gold_links))

    @property
    def tool_name(self) -> str:
        return self.gold_call.name

    @property
    def hop_count(self) -> int:
        return len(self.gold_links)

    @property
    def prompt_text(self) -> str:
        """The user turn as the model sees it: speaker tag plus query, no links."""
        return f"<speak>Speaker: {self.speaker}</speak> {self.query}"

    @property
    def retrieval_text(self) -> str:
        return f"Speaker: {self.speaker}. {self.query}"

    def gold_paths(self) -> list[GroundedPath]:
        return [GroundedPath(chain) for chain in rechain(self.gold_links)]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "speaker": self.speaker,
            "query": self.query,
            "links": [t.as_list() for t in self.gold_links],
            "hop_count": self.hop_count,
            "tool": self.tool_name,
            "answer": self.gold_call.to_dict(),
        }
        if self.candidate_tools is not None:
            out["candidate_tools"] = list(self.candidate_tools)
        return out


def rechain(links: Sequence[Triple]) -> list[tuple[Triple, ...]]:
    """Split a flat link list into chains; a chain breaks when head != previous tail."""
    chains: list[list[Triple]] = []
    for t in links:
        if chains and chains[-1][-1].tail == t.head:
            chains[-1].append(t)
        else:
            chains.append([t])
    return [tuple(c) for c in chains]


def _sample_from_record(record: Mapping[str, Any], index: int) -> Sample:
    if not isinstance(record, Mapping):
        raise DatasetError("record is not an object", index)
    answer = record.get("answer")
    if isinstance(answer, str):
        try:
            answer = json.loads(answer)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"answer is not valid JSON: {exc.msg}", index) from exc
    if isinstance(answer, list) and len(answer) == 1:
        answer = answer[0]
    if not isinstance(answer, Mapping) or "name" not in answer:
        raise DatasetError("missing answer object with a 'name'", index)
    try:
        call = ToolCall.from_dict(answer)
    except (DatasetError, json.JSONDecodeError) as exc:
        raise DatasetError(f"bad answer: {exc}", index) from exc
    sid = str(record.get("id", index))
    candidates = record.get("candidate_tools")
    candidates = tuple(candidates) if candidates is not None else None

    if "links" in record:
        try:
            links = [Triple(*row) for row in record["links"]]
        except (TypeError, ValueError) as exc:
            raise LinkAnnotationError(f"bad links field: {exc}", index) from exc
        for key in ("speaker", "query"):
            if not isinstance(record.get(key), str):
                raise DatasetError(f"normalized record lacks string field {key!r}", index)
        sample = Sample(sid, record["speaker"], record["query"], tuple(links), call, candidates)
        if "hop_count" in record and record["hop_count"] != sample.hop_count:
            raise DatasetError(
                f"hop_count {record['hop_count']} disagrees with {sample.hop_count} links", index
            )
    else:
        question = record.get("question")
        if isinstance(question, list) and len(question) == 1:
            question = question[0]
        if not isinstance(question, str):
            raise DatasetError("missing string field 'question'", index)
        try:
            speaker, query, links = split_question(question)
        except LinkAnnotationError as exc:
            raise LinkAnnotationError(str(exc), index) from exc
        except DatasetError as exc:
            raise DatasetError(str(exc), index) from exc
        sample = Sample(sid, speaker, query, tuple(links), call, candidates)

    tool = record.get("tool", record.get("name"))
    if tool is not None and tool != call.name:
        raise DatasetError(f"tool {tool!r} disagrees with answer name {call.name!r}", index)
    return sample


def load_dataset(source: str | Path | Sequence[Mapping[str, Any]]) -> list[Sample]:
    """Load raw (``question`` with embedded tags) or normalized (``links``) records.

    ``source`` is a path to a JSON array / JSON-lines file, or the decoded list.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
        stripped = text.lstrip()
        if stripped.startswith("["):
            records = json.loads(text)
        else:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
    else:
        records = source
    if not isinstance(records, list):
        raise DatasetError("dataset must be a JSON array of records")
    samples = [_sample_from_record(r, i) for i, r in enumerate(records)]
    seen: set[str] = set()
    for i, s in enumerate(samples):
        if s.id in seen:
            raise DatasetError(f"duplicate sample id {s.id!r}", i)
        seen.add(s.id)
    return samples


def dump_dataset(samples: Iterable[Sample]) -> str:
    """Normalized JSON rendering (canonical field order, one record per line)."""
    rows = [json.dumps(s.to_dict(), ensure_ascii=False) for s in samples]
    if not rows:
        return "[]\n"
    return "[\n" + ",\n".join(rows) + "\n]\n"


def hop_histogram(samples: Iterable[Sample]) -> dict[int, int]:
    return dict(sorted(Counter(s.hop_count for s in samples).items()))


def gold_terminals(sample: Sample, kg: KnowledgeGraph) -> set[str]:
    """KG entities the gold call needs: string parameter values naming KG entities.

    Falls back to the terminal entity of every gold chain when no parameter
    value is a KG entity.
    """
    values = {v for v in sample.gold_call.parameters.values() if isinstance(v, str)}
    used = values & kg.entity_set
    if used:
        return used
    return {chain[-1].tail for chain in rechain(sample.gold_links)}


# -- examination -----------------------------------------------------------

@dataclass(frozen=True)
class ValidationFlag:
    sample_id: str
    kind: str
    detail: str


@dataclass
class ValidationReport:
    checked: int
    flags: list[ValidationFlag] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.flags

    @property
    def flagged_ids(self) -> list[str]:
        return list(dict.fromkeys(f.sample_id for f in self.flags))


def validate_against_kg(samples: Sequence[Sample], kg: KnowledgeGraph) -> ValidationReport:
    """Flag gold links absent from the KG, and gold values that are KG entities
    the gold links never reach."""
    report = ValidationReport(checked=len(samples))
    for s in samples:
        for t in s.gold_links:
            if t not in kg.triples:
                report.flags.append(ValidationFlag(s.id, "hallucinated_link", f"{t.as_list()} not in KG"))
        reached = {e for t in s.gold_links for e in (t.head, t.tail)}
        for name, value in s.gold_call.parameters.items():
            if isinstance(value, str) and value in kg.entity_set and value not in reached:
                report.flags.append(
                    ValidationFlag(s.id, "unsupported_value", f"{name}={value!r} is a KG entity not in the gold links")
                )
    return report


@dataclass(frozen=True)
class CallCheck:
    syntax: bool
    parameter_standard: bool
    feasibility: bool
    problems: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.syntax and self.parameter_standard and self.feasibility


def _conforms(value: Any, type_tag: str) -> bool:
    kind = _TYPE_ALIASES.get(type_tag.lower())
    if kind is None:
        return True
    if kind == "string":
        return isinstance(value, str)
    if kind == "integer":
        if isinstance(value, bool):
            return False
        if isinstance(value, int):
            return True
        return isinstance(value, str) and re.fullmatch(r"\s*[-+]?\d+\s*", value) is not None
    if kind == "number":
        if isinstance(value, bool):
            return False
        if isinstance(value, (int, float)):
            return True
        try:
            float(value)
        except (TypeError, ValueError):
            return False
        return True
    if kind == "boolean":
        return isinstance(value, bool) or (isinstance(value, str) and value.lower() in ("true", "false"))
    if kind == "array":
        return isinstance(value, list)
    return isinstance(value, dict)


def examine_call(call: ToolCall, doc: ToolDoc) -> CallCheck:
    """Syntax, parameter-standardization and feasibility checks of a call against its doc."""
    problems: list[str] = []

    syntax = isinstance(call.name, str) and bool(call.name.strip()) and isinstance(call.parameters, Mapping)
    if syntax:
        try:
            json.dumps(call.to_dict())
        except (TypeError, ValueError):
            syntax = False
        if not all(isinstance(k, str) for k in call.parameters):
            syntax = False
    if not syntax:
        problems.append("call is not a well-formed {name, parameters} JSON object")

    standard = syntax
    if syntax:
        for pname, value in call.parameters.items():
            spec = doc.parameter(pname)
            if spec is None:
                problems.append(f"unknown parameter {pname!r}")
                standard = False
                continue
            if not _conforms(value, spec.type):
                problems.append(f"{pname}={value!r} does not conform to type {spec.type!r}")
                standard = False
            if spec.enum is not None and value not in spec.enum:
                problems.append(f"{pname}={value!r} outside allowed values")
                standard = False
        for pname in sorted(doc.required - set(call.parameters)):
            problems.append(f"missing required parameter {pname!r}")
            standard = False

    feasible = call.name == doc.name
    if not feasible:
        problems.append(f"call names {call.name!r} but the document describes {doc.name!r}")
    return CallCheck(syntax, standard, feasible, tuple(problems))


@dataclass(frozen=True)
class DatasetSummary:
    samples: int
    tools: int
    kg: KGStats
    hops: dict[int, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "samples": self.samples,
            "tools": self.tools,
            "kg": {"nodes": self.kg.nodes, "edges": self.kg.edges, "edge_types": self.kg.edge_types},
            "hops": {str(h): c for h, c in self.hops.items()},
        }


def summarize(samples: Sequence[Sample], tools: Mapping[str, ToolDoc], kg: KnowledgeGraph) -> DatasetSummary:
    return DatasetSummary(len(samples), len(tools), kg.stats(), hop_histogram(samples))


# Published statistics of the two FamilyTool releases (tool count, samples,
# KG nodes/edges/edge types, hop histogram).
PUBLISHED_STATS = {
    "familytool-b": DatasetSummary(483, 102, KGStats(154, 147, 65), {1: 106, 2: 361, 3: 13, 4: 3}),
    "familytool-e": DatasetSummary(455, 102, KGStats(491, 480, 66), {2: 36, 3: 387, 4: 22, 5: 7, 6: 3}),
}
