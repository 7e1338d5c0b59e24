"""Ground LLM relation paths that may contain fake relations.

Three strategies:

``exact``
    plain label matching (:func:`kgetool.kg.ground_exact`).
``greedy_search``
    walk left to right; wherever the frontier entity has no out-edge with the
    requested label, follow *all* of its out-edges instead.
``relation_retrieval``
    replace each relation missing from the KG vocabulary by its top-k most
    similar vocabulary relations, then ground every combination exactly.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass

from kgetool.kg import GroundedPath, KnowledgeGraph, RelationPath, Triple, ground_exact
from kgetool.similarity import SimilarityProvider

STRATEGIES = ("exact", "greedy_search", "relation_retrieval")
DEFAULT_MAX_CANDIDATES = 4096


class ExtractionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    strategy: str = "greedy_search"
    k: int = 1
    max_candidates: int = DEFAULT_MAX_CANDIDATES

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ExtractionConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.k < 1:
            raise ExtractionConfigError(f"k must be >= 1, got {self.k}")
        if self.max_candidates < 1:
            raise ExtractionConfigError(f"max_candidates must be >= 1, got {self.max_candidates}")


@dataclass(frozen=True)
class ExtractionResult:
    """Outcome of grounding one (or several merged) relation paths.

    ``candidate_count_pre_filter`` is strategy specific: for greedy search the
    number of full-length walks the substitution rule admits, for relation
    retrieval the size of the Cartesian product of substitutions, for exact
    matching the number of relation paths tried. ``candidates_grounded`` is
    how many of those survived the ``max_candidates`` cap.
    """

    grounded: frozenset[GroundedPath]
    fake_relation_count: int
    candidate_count_pre_filter: int
    candidates_grounded: int
    truncated: bool = False

    @property
    def links(self) -> set[Triple]:
        return {t for p in self.grounded for t in p.links}

    def sorted_paths(self) -> list[GroundedPath]:
        return sorted(self.grounded)


def count_fake_relations(kg: KnowledgeGraph, path: RelationPath) -> int:
    return sum(r not in kg.relation_vocab for r in path.relations)


def _greedy_choices(kg: KnowledgeGraph, entity: str, relation: str) -> list[Triple]:
    edges = kg.out_edges(entity)
    matching = [t for t in edges if t.relation == relation]
    return sorted(matching or edges)


def extract_exact(kg: KnowledgeGraph, path: RelationPath) -> ExtractionResult:
    return ExtractionResult(
        grounded=frozenset(ground_exact(kg, path)),
        fake_relation_count=count_fake_relations(kg, path),
        candidate_count_pre_filter=1,
        candidates_grounded=1,
    )


def extract_greedy(
    kg: KnowledgeGraph, path: RelationPath, max_candidates: int = DEFAULT_MAX_CANDIDATES
) -> ExtractionResult:
    # Walk counts per frontier entity give the exact pre-filter count without
    # materializing every walk.
    counts: dict[str, int] = {path.start: 1}
    for relation in path.relations:
        nxt: dict[str, int] = defaultdict(int)
        for entity, c in counts.items():
            for t in _greedy_choices(kg, entity, relation):
                nxt[t.tail] += c
        counts = nxt
    total = sum(counts.values())

    frontier: list[tuple[Triple, ...]] = [()]
    truncated = False
    for relation in path.relations:
        extended = [
            partial + (t,)
            for partial in frontier
            for t in _greedy_choices(kg, partial[-1].tail if partial else path.start, relation)
        ]
        if len(extended) > max_candidates:
            extended = sorted(extended)[:max_candidates]
            truncated = True
        frontier = extended
        if not frontier:
            break

    grounded = frozenset(GroundedPath(links) for links in frontier if links)
    return ExtractionResult(
        grounded=grounded,
        fake_relation_count=count_fake_relations(kg, path),
        candidate_count_pre_filter=total,
        candidates_grounded=len(frontier),
        truncated=truncated,
    )


def extract_relation_retrieval(
    kg: KnowledgeGraph,
    path: RelationPath,
    sim: SimilarityProvider,
    k: int,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
) -> ExtractionResult:
    if k < 1:
        raise ExtractionConfigError(f"k must be >= 1, got {k}")
    fake_positions = [i for i, r in enumerate(path.relations) if r not in kg.relation_vocab]
    if not fake_positions:
        return extract_exact(kg, path)

    vocab = kg.sorted_relations()
    if not vocab:
        return ExtractionResult(frozenset(), len(fake_positions), 0, 0)
    options = [sim.top_k(path.relations[i], vocab, k) for i in fake_positions]
    total = math.prod(len(o) for o in options)

    def order(combo: tuple[tuple[str, float], ...]):
        return (-sum(score for _, score in combo), tuple(rel for rel, _ in combo))

    combos = itertools.product(*options)
    if total > max_candidates:
        kept = heapq.nsmallest(max_candidates, combos, key=order)
    else:
        kept = sorted(combos, key=order)

    grounded: set[GroundedPath] = set()
    for combo in kept:
        relations = list(path.relations)
        for pos, (rel, _) in zip(fake_positions, combo):
            relations[pos] = rel
        grounded |= ground_exact(kg, RelationPath(path.start, tuple(relations)))
    return ExtractionResult(
        grounded=frozenset(grounded),
        fake_relation_count=len(fake_positions),
        candidate_count_pre_filter=total,
        candidates_grounded=len(kept),
        truncated=total > max_candidates,
    )


def extract(
    kg: KnowledgeGraph,
    path: RelationPath,
    config: ExtractionConfig,
    sim: SimilarityProvider | None = None,
) -> ExtractionResult:
    if config.strategy == "exact":
        return extract_exact(kg, path)
    if config.strategy == "greedy_search":
        return extract_greedy(kg, path, config.max_candidates)
    if sim is None:
        raise ExtractionConfigError("relation_retrieval needs a similarity provider")
    return extract_relation_retrieval(kg, path, sim, config.k, config.max_candidates)


def merge_results(results: Iterable[ExtractionResult]) -> ExtractionResult:
    grounded: set[GroundedPath] = set()
    fake = pre = kept = 0
    truncated = False
    for r in results:
        grounded |= r.grounded
        fake += r.fake_relation_count
        pre += r.candidate_count_pre_filter
        kept += r.candidates_grounded
        truncated |= r.truncated
    return ExtractionResult(frozenset(grounded), fake, pre, kept, truncated)


def extract_all(
    kg: KnowledgeGraph,
    paths: Iterable[RelationPath],
    config: ExtractionConfig,
    sim: SimilarityProvider | None = None,
) -> ExtractionResult:
    """Ground several searches from one model response and union the results."""
    return merge_results(extract(kg, p, config, sim) for p in paths)
