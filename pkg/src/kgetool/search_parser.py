"""Parse ``KG.search(Start=..., Path=[...])`` expressions out of free-form LLM text.

Grammar (whitespace between elements ignored, keywords case-insensitive)::

    search := "KG.search" "(" "Start" "=" token "," "Path" "=" "[" token ("," token)* "]" ")"
    token  := '"' chars '"' | "'" chars "'" | bare

A bare token runs up to the next delimiter (``, [ ] ( ) =`` or a quote) and is
stripped, so ``Start=Mr. Smith`` parses the same as ``Start="Mr. Smith"``.
Text outside expressions, including reasoning traces, is ignored; a truncated
or malformed expression is skipped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from kgetool.kg import RelationPath

_OPENER = re.compile(r"KG\.search\s*\(")
_WS = re.compile(r"\s*")
_BARE = re.compile(r"[^,\[\]()='\"\n]+")
_SAFE_BARE = re.compile(r"[A-Za-z0-9_.\-]+")


@dataclass(frozen=True)
class ParsedSearches:
    searches: tuple[RelationPath, ...]
    raw_text: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "searches", tuple(self.searches))
        if not self.searches:
            raise ValueError("ParsedSearches needs at least one search; use FormatError instead")

    @property
    def relations(self) -> list[str]:
        return [r for s in self.searches for r in s.relations]


@dataclass(frozen=True)
class FormatError:
    """Outcome (not an exception) for text holding no well-formed KG.search."""

    raw_text: str
    reason: str


class _NoMatch(Exception):
    pass


class _Cursor:
    def __init__(self, text: str, pos: int) -> None:
        self.text = text
        self.pos = pos

    def skip_ws(self) -> None:
        self.pos = _WS.match(self.text, self.pos).end()

    def literal(self, word: str, *, fold: bool = False) -> None:
        self.skip_ws()
        chunk = self.text[self.pos : self.pos + len(word)]
        if (chunk.lower() == word.lower()) if fold else (chunk == word):
            self.pos += len(word)
            return
        raise _NoMatch(f"expected {word!r} at offset {self.pos}")

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos : self.pos + 1]

    def token(self) -> str:
        self.skip_ws()
        quote = self.text[self.pos : self.pos + 1]
        if quote in ("'", '"'):
            end = self.text.find(quote, self.pos + 1)
            if end < 0:
                raise _NoMatch("unterminated quoted token")
            value = self.text[self.pos + 1 : end]
            self.pos = end + 1
        else:
            m = _BARE.match(self.text, self.pos)
            if not m:
                raise _NoMatch(f"expected token at offset {self.pos}")
            value = m.group().strip()
            self.pos = m.end()
        if not value.strip():
            raise _NoMatch("empty token")
        return value


def _parse_one(text: str, pos: int) -> tuple[RelationPath, int]:
    cur = _Cursor(text, pos)
    cur.literal("Start", fold=True)
    cur.literal("=")
    start = cur.token()
    cur.literal(",")
    cur.literal("Path", fold=True)
    cur.literal("=")
    cur.literal("[")
    relations = [cur.token()]
    while cur.peek() == ",":
        cur.literal(",")
        relations.append(cur.token())
    cur.literal("]")
    cur.literal(")")
    return RelationPath(start, tuple(relations)), cur.pos


def parse_kg_search(text: str) -> ParsedSearches | FormatError:
    """Extract every well-formed KG.search expression, in order of occurrence."""
    searches: list[RelationPath] = []
    failures: list[str] = []
    pos = 0
    while True:
        m = _OPENER.search(text, pos)
        if m is None:
            break
        try:
            path, end = _parse_one(text, m.end())
        except _NoMatch as exc:
            failures.append(str(exc))
            pos = m.start() + 1
            continue
        searches.append(path)
        pos = end
    if searches:
        return ParsedSearches(tuple(searches), text)
    if failures:
        reason = f"{len(failures)} malformed KG.search expression(s); first: {failures[0]}"
    else:
        reason = "no KG.search expression found"
    return FormatError(text, reason)


def _render_token(value: str) -> str:
    if _SAFE_BARE.fullmatch(value):
        return value
    if '"' not in value:
        return f'"{value}"'
    if "'" not in value:
        return f"'{value}'"
    raise ValueError(f"token {value!r} contains both quote characters and cannot be rendered")


def render_search(path: RelationPath) -> str:
    """Canonical DSL text; parses back to an equal :class:`RelationPath`."""
    rels = ", ".join(_render_token(r) for r in path.relations)
    return f"KG.search(Start={_render_token(path.start)}, Path=[{rels}])"
