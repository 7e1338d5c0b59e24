import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import kg_of, random_triples
from kgetool import kg as kgmod
from kgetool.kg import (
    GroundedPath,
    KGParseError,
    KnowledgeGraph,
    RelationPath,
    Triple,
    dump_kg,
    entities_of,
    ground_exact,
    links_to_documents,
    load_kg,
    out_edges,
    parse_link_text,
    render_link_text,
)
from oracles import exact_walks, scan_out_edges

SEED = [
    ("Alice", "husband", "Jack"), ("Jack", "wife", "Alice"), ("Alice", "son", "Bob"),
    ("Jack", "son", "Bob"), ("Bob", "mother", "Alice"), ("Bob", "father", "Jack"),
]


def test_seed_kg_counts(seed_kg):
    assert seed_kg == kg_of(SEED)
    stats = seed_kg.stats()
    assert (stats.nodes, stats.edges) == (3, 6)
    # "son" labels two edges, so six triples carry five distinct labels
    assert stats.edge_types == 5
    assert seed_kg.relation_vocab == {"husband", "wife", "son", "mother", "father"}


def test_empty_and_duplicates():
    empty = load_kg("[]")
    assert (empty.stats().nodes, empty.stats().edges) == (0, 0)
    twice = load_kg('[["A", "r", "B"], ["A", "r", "B"]]')
    assert len(twice) == 1


def test_tsv_and_json_agree():
    tsv = "\n".join("\t".join(t) for t in SEED) + "\n"
    assert load_kg(tsv) == load_kg(dump_kg(kg_of(SEED)))


def test_tsv_skips_comments_and_blanks():
    assert len(load_kg("# family\n\nA\tr\tB\n")) == 1


@pytest.mark.parametrize(
    "text, line",
    [
        ("A\tr\tB\nA\tr\n", 2),
        ("A\tr\tB\n\nA\t \tC\n", 3),
        ('[\n  ["A", "r", "B"],\n  ["A", "r"]\n]', 3),
        ('[\n  ["A", "r", "B"],\n  ["A", "r", 1]\n]', 3),
        ('[\n  ["A", "r", "B"\n', 3),
    ],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(KGParseError) as info:
        load_kg(text)
    assert info.value.line == line


def test_triple_rejects_blank_fields():
    with pytest.raises(ValueError):
        Triple("A", "", "B")


def test_out_edges_seed(seed_kg):
    assert out_edges(seed_kg, "Alice") == {Triple("Alice", "husband", "Jack"), Triple("Alice", "son", "Bob")}
    assert out_edges(seed_kg, "Zoe") == frozenset()


def test_out_edges_matches_scan_oracle():
    rng = random.Random(7)
    for _ in range(50):
        triples = random_triples(rng, max_edges=20)
        kg = kg_of(triples)
        for e in {t[0] for t in triples} | {t[2] for t in triples} | {"missing"}:
            assert {tuple(t.as_list()) for t in out_edges(kg, e)} == \
                scan_out_edges(triples, e)


def test_ground_exact_examples(seed_kg):
    assert ground_exact(seed_kg, RelationPath("Alice", ("son",))) == {GroundedPath((Triple("Alice", "son", "Bob"),))}
    assert ground_exact(seed_kg, RelationPath("Alice", ("daughter",))) == set()
    assert ground_exact(seed_kg, RelationPath("Zoe", ("son",))) == set()


def test_ground_exact_branches():
    kg = kg_of([("A", "likes", "X"), ("A", "likes", "Y")])
    got = ground_exact(kg, RelationPath("A", ("likes",)))
    assert {tuple(tuple(t.as_list()) for t in p.links) for p in got} == exact_walks(
        [("A", "likes", "X"), ("A", "likes", "Y")], "A", ("likes",)
    )
    assert len(got) == 2


def test_ground_exact_matches_walk_oracle():
    rng = random.Random(11)
    for _ in range(150):
        triples = random_triples(rng, max_edges=25, n_entities=5, n_relations=3)
        kg = kg_of(triples)
        start = rng.choice(triples)[0]
        rels = tuple(rng.choice(["r0", "r1", "r2"]) for _ in range(rng.randint(1, 3)))
        got = {tuple(tuple(t.as_list()) for t in p.links) for p in ground_exact(kg, RelationPath(start, rels))}
        assert got == exact_walks(triples, start, rels)


def test_relation_path_needs_relations():
    with pytest.raises(ValueError):
        RelationPath("Bob", ())


def test_grounded_path_rejects_broken_chain():
    with pytest.raises(ValueError):
        GroundedPath((Triple("A", "r", "B"), Triple("C", "r", "D")))


def test_entities_of():
    path = GroundedPath((Triple("Bob", "father", "Jack"),
                         Triple("Jack", "prefer_dining_location", "dining_location_0001")))
    assert entities_of({path}) == {"Bob", "Jack", "dining_location_0001"}
    assert entities_of(set()) == set()


def test_entities_of_matches_flat_scan():
    rng = random.Random(3)
    for _ in range(50):
        triples = random_triples(rng, max_edges=15)
        kg = kg_of(triples)
        paths = set()
        for t in rng.sample(triples, k=min(len(triples), 4)):
            paths |= ground_exact(kg, RelationPath(t[0], (t[1],)))
        flat = set()
        for p in paths:
            for link in p.links:
                flat.update([link.head, link.tail])
        assert entities_of(paths) == flat


def test_document_text():
    t = Triple("Bob", "father", "Jack")
    assert render_link_text(t) == "Bob father Jack."
    assert parse_link_text("Bob father Jack.") == t
    assert parse_link_text(render_link_text(Triple("Mr. Smith", "prefer_food", "food_0003"))) == \
        Triple("Mr. Smith", "prefer_food", "food_0003")


def test_documents_cover_kg(family_kg):
    assert links_to_documents(KnowledgeGraph.from_triples([])) == []
    docs = links_to_documents(family_kg)
    assert len(docs) == len(family_kg)
    assert [d.id for d in docs] == [f"doc-{i:05d}" for i in range(len(docs))]
    assert {d.source_triple for d in docs} == family_kg.triples


field = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12).filter(
    lambda s: s.strip() == s and s.strip() != ""
)


@given(field, field, field)
@settings(max_examples=200)
def test_document_round_trip(h, r, t):
    triple = Triple(h, r, t)
    assert parse_link_text(render_link_text(triple)) == triple


@given(st.lists(st.tuples(st.sampled_from("ABCDE"), st.sampled_from(["r", "s", "t"]), st.sampled_from("ABCDE")),
                max_size=20))
def test_dump_load_round_trip(rows):
    kg = kg_of(rows)
    assert load_kg(dump_kg(kg)) == kg


def test_module_level_out_edges_is_index_lookup(seed_kg):
    assert kgmod.out_edges(seed_kg, "Bob") is seed_kg.out_edges("Bob")
