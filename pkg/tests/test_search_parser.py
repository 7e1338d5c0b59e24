import ast

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgetool.kg import RelationPath
from kgetool.search_parser import FormatError, ParsedSearches, parse_kg_search, render_search


def test_single_search():
    got = parse_kg_search("KG.search(Start=Bob, Path=[father, prefer_dining_location])")
    assert isinstance(got, ParsedSearches)
    assert got.searches == (RelationPath("Bob", ("father", "prefer_dining_location")),)


def test_two_searches_in_order_inside_prose():
    text = "I think… KG.search(Start=Bob, Path=[mother]) and KG.search(Start=Bob, Path=[father])"
    got = parse_kg_search(text)
    assert [s.relations for s in got.searches] == [("mother",), ("father",)]
    assert got.relations == ["mother", "father"]
    assert got.raw_text == text


def test_refusal_is_format_error():
    got = parse_kg_search("Sorry, I cannot find a path.")
    assert isinstance(got, FormatError)
    assert "no KG.search" in got.reason


def test_quoted_tokens():
    text = "KG.search(Start='Mr. Smith', Path=['prefer_food'])"
    got = parse_kg_search(text)
    assert got.searches == (RelationPath("Mr. Smith", ("prefer_food",)),)


def test_quoted_tokens_against_python_tokenizer():
    # Python's own literal parser serves as the reference tokenizer for quoted lists.
    tokens = ["'Mr. Smith'", '"prefer_food"', "'a, b'", '"x [y]"', "'=eq='"]
    start, rels = tokens[0], tokens[1:]
    text = f"KG.search(Start={start}, Path=[{', '.join(rels)}])"
    expected = ast.literal_eval(f"[{', '.join(tokens)}]")
    got = parse_kg_search(text).searches[0]
    assert [got.start, *got.relations] == expected


def test_bare_token_with_space_matches_quoted():
    assert parse_kg_search("KG.search(Start=Mr. Smith, Path=[prefer_food])") == \
        parse_kg_search("KG.search(Start=Mr. Smith, Path=[prefer_food])")
    bare = parse_kg_search("KG.search(Start=Mr. Smith, Path=[prefer_food])").searches
    quoted = parse_kg_search('KG.search(Start="Mr. Smith", Path=["prefer_food"])').searches
    assert bare == quoted


def test_keywords_case_insensitive_and_whitespace():
    got = parse_kg_search("KG.search ( start = Bob ,\n  path = [ mother ,father ] )")
    assert got.searches == (RelationPath("Bob", ("mother", "father")),)


@pytest.mark.parametrize(
    "text",
    [
        "KG.search(Start=Bob, Path=[])",
        "KG.search(Start=Bob, Path=[mother]",
        "KG.search(Start=, Path=[mother])",
        "KG.search(Path=[mother], Start=Bob)",
        "KG.search(Start='Bob, Path=[mother])",
    ],
)
def test_malformed_is_format_error(text):
    got = parse_kg_search(text)
    assert isinstance(got, FormatError)
    assert "malformed" in got.reason


def test_malformed_expression_skipped_when_a_valid_one_follows():
    got = parse_kg_search("KG.search(Start=Bob, Path=[ KG.search(Start=Bob, Path=[mother])")
    assert got.searches == (RelationPath("Bob", ("mother",)),)


def test_reasoning_trace_ignored():
    text = "<think>maybe KG.search(Start=Alice, Path=[son</think>\nKG.search(Start=Bob, Path=[father])"
    assert parse_kg_search(text).searches == (RelationPath("Bob", ("father",)),)


def test_render_canonical():
    assert render_search(RelationPath("Bob", ("father", "prefer_food"))) == \
        "KG.search(Start=Bob, Path=[father, prefer_food])"
    assert render_search(RelationPath("Mr. Smith", ("prefer food",))) == \
        'KG.search(Start="Mr. Smith", Path=["prefer food"])'


token = st.text(min_size=1, max_size=15).filter(
    lambda s: s.strip() and not ('"' in s and "'" in s)
)


@given(token, st.lists(token, min_size=1, max_size=5))
@settings(max_examples=300)
def test_render_parse_round_trip(start, relations):
    path = RelationPath(start, tuple(relations))
    got = parse_kg_search(render_search(path))
    assert got.searches == (path,)


prose = st.text(max_size=60).filter(lambda s: "KG.search" not in s)


@given(prose, prose)
@settings(max_examples=200)
def test_prose_immunity(before, after):
    expr = "KG.search(Start=Bob, Path=[mother, prefer_food])"
    got = parse_kg_search(before + " " + expr + " " + after)
    assert got.searches[0] == RelationPath("Bob", ("mother", "prefer_food"))


@given(prose)
def test_prose_alone_is_format_error(text):
    assert isinstance(parse_kg_search(text), FormatError)


@given(st.text(max_size=120))
def test_deterministic_and_total(text):
    first = parse_kg_search(text)
    assert first == parse_kg_search(text)
    assert isinstance(first, (ParsedSearches, FormatError))
