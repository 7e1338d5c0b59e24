"""Immutable knowledge-graph store, exact path grounding and link documents."""

from __future__ import annotations

import json
import shlex
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType


class KGParseError(ValueError):
    """Malformed triple file. Carries the 1-based line and column of the fault."""

    def __init__(self, message: str, line: int, column: int = 1) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True, order=True)
class Triple:
    head: str
    relation: str
    tail: str

    def __post_init__(self) -> None:
        for name in ("head", "relation", "tail"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"triple {name} must be a non-empty string, got {value!r}")

    def as_list(self) -> list[str]:
        return [self.head, self.relation, self.tail]


@dataclass(frozen=True)
class RelationPath:
    """A start entity plus the relation sequence an LLM asked to follow.

    Relations are not checked against any vocabulary: fake relations are
    exactly what the extraction strategies have to cope with.
    """

    start: str
    relations: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "relations", tuple(self.relations))
        if not self.relations:
            raise ValueError("relation path needs at least one relation")


@dataclass(frozen=True, order=True)
class GroundedPath:
    links: tuple[Triple, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "links", tuple(self.links))
        for prev, nxt in zip(self.links, self.links[1:]):
            if prev.tail != nxt.head:
                raise ValueError(f"broken chain: {prev} does not lead into {nxt}")

    def __len__(self) -> int:
        return len(self.links)

    @property
    def end(self) -> str | None:
        return self.links[-1].tail if self.links else None


@dataclass(frozen=True)
class KGStats:
    nodes: int
    edges: int
    edge_types: int


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Directed labeled multigraph with a head-entity adjacency index.

    Build it from triples with :meth:`from_triples` (or :func:`load_kg`); the
    index, relation vocabulary and entity set are derived and never mutated.
    """

    triples: frozenset[Triple]
    out_index: Mapping[str, frozenset[Triple]] = field(repr=False)
    relation_vocab: frozenset[str] = field(repr=False)
    entity_set: frozenset[str] = field(repr=False)

    @classmethod
    def from_triples(cls, triples: Iterable[Triple]) -> KnowledgeGraph:
        unique = frozenset(triples)
        index: dict[str, set[Triple]] = {}
        entities: set[str] = set()
        for t in unique:
            index.setdefault(t.head, set()).add(t)
            entities.add(t.head)
            entities.add(t.tail)
        return cls(
            triples=unique,
            out_index=MappingProxyType({h: frozenset(ts) for h, ts in index.items()}),
            relation_vocab=frozenset(t.relation for t in unique),
            entity_set=frozenset(entities),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.triples == other.triples

    def __hash__(self) -> int:
        return hash(self.triples)

    def __len__(self) -> int:
        return len(self.triples)

    def stats(self) -> KGStats:
        return KGStats(len(self.entity_set), len(self.triples), len(self.relation_vocab))

    def out_edges(self, entity: str) -> frozenset[Triple]:
        return self.out_index.get(entity, frozenset())

    def out_degree(self, entity: str) -> int:
        return len(self.out_edges(entity))

    def sorted_triples(self) -> list[Triple]:
        return sorted(self.triples)

    def sorted_relations(self) -> list[str]:
        return sorted(self.relation_vocab)


def _triple_from_fields(fields: list, line: int) -> Triple:
    if len(fields) != 3:
        raise KGParseError(f"expected 3 fields, got {len(fields)}", line)
    if not all(isinstance(f, str) for f in fields):
        raise KGParseError("triple fields must be strings", line)
    stripped = [f.strip() for f in fields]
    for name, value in zip(("head", "relation", "tail"), stripped):
        if not value:
            raise KGParseError(f"empty {name}", line)
    return Triple(*stripped)


def _array_line_numbers(text: str) -> list[int]:
    # Line of every "[" opening a triple (depth 2) in a JSON array, used to
    # point errors at the offending row. Strings are skipped.
    lines, depth, line, in_str, escape = [], 0, 1, False, False
    for ch in text:
        if ch == "\n":
            line += 1
        if in_str:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch == "[":
            depth += 1
            if depth == 2:
                lines.append(line)
        elif ch == "]":
            depth -= 1
    return lines


def _parse_json_triples(text: str) -> list[Triple]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise KGParseError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(data, list):
        raise KGParseError("top-level value must be an array of triples", 1)
    row_lines = _array_line_numbers(text)
    triples = []
    for i, row in enumerate(data):
        line = row_lines[i] if i < len(row_lines) else 1
        if not isinstance(row, list):
            raise KGParseError(f"row {i} is not an array", line)
        triples.append(_triple_from_fields(row, line))
    return triples


def _parse_tsv_triples(text: str) -> list[Triple]:
    triples = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        triples.append(_triple_from_fields(raw.rstrip("\r\n").split("\t"), lineno))
    return triples


def load_kg(source: str | bytes) -> KnowledgeGraph:
    """Parse triple-file content (JSON array of triples, or one TSV triple per line).

    The format is sniffed from the first non-blank character. Duplicate triples
    collapse; inverse edges are never synthesized.
    """
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    text = text.lstrip("﻿")
    if text.lstrip().startswith("["):
        triples = _parse_json_triples(text)
    else:
        triples = _parse_tsv_triples(text)
    return KnowledgeGraph.from_triples(triples)


def load_kg_file(path: str | Path) -> KnowledgeGraph:
    return load_kg(Path(path).read_text(encoding="utf-8"))


def dump_kg(kg: KnowledgeGraph) -> str:
    """JSON triple-file rendering, one triple per line in sorted order."""
    rows = [json.dumps(t.as_list(), ensure_ascii=False) for t in kg.sorted_triples()]
    if not rows:
        return "[]\n"
    return "[\n  " + ",\n  ".join(rows) + "\n]\n"


def out_edges(kg: KnowledgeGraph, entity: str) -> frozenset[Triple]:
    return kg.out_edges(entity)


def ground_exact(kg: KnowledgeGraph, path: RelationPath) -> set[GroundedPath]:
    """Every edge chain from ``path.start`` whose i-th label is ``path.relations[i]``.

    Branches wherever one head has several tails under the same relation.
    Unknown start entities and absent relations give an empty set.
    """
    frontier: list[tuple[Triple, ...]] = [()]
    for i, relation in enumerate(path.relations):
        nxt = []
        for partial in frontier:
            at = partial[-1].tail if partial else path.start
            for t in kg.out_edges(at):
                if t.relation == relation:
                    nxt.append(partial + (t,))
        if not nxt:
            return set()
        frontier = nxt
    return {GroundedPath(links) for links in frontier}


def entities_of(paths: Iterable[GroundedPath]) -> set[str]:
    found: set[str] = set()
    for p in paths:
        for t in p.links:
            found.add(t.head)
            found.add(t.tail)
    return found


def links_of(paths: Iterable[GroundedPath]) -> set[Triple]:
    return {t for p in paths for t in p.links}


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    source_triple: Triple


def render_link_text(triple: Triple) -> str:
    """``"<head> <relation> <tail>."`` with shell-style quoting of any field
    that would otherwise be ambiguous (whitespace, quotes)."""
    return " ".join(shlex.quote(f) for f in triple.as_list()) + "."


def parse_link_text(text: str) -> Triple:
    body = text.strip()
    if not body.endswith("."):
        raise ValueError(f"document text must end with '.': {text!r}")
    fields = shlex.split(body[:-1])
    if len(fields) != 3:
        raise ValueError(f"document text does not hold exactly one triple: {text!r}")
    return Triple(*fields)


def links_to_documents(kg: KnowledgeGraph) -> list[Document]:
    return [
        Document(id=f"doc-{i:05d}", text=render_link_text(t), source_triple=t)
        for i, t in enumerate(kg.sorted_triples())
    ]
