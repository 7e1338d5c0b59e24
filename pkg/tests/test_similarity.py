import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgetool.kg import links_to_documents
from kgetool.similarity import (
    LexicalSimilarity,
    ProviderError,
    RemoteEmbeddingSimilarity,
    VectorFileSimilarity,
    char_trigrams,
    make_provider,
    relation_phrase,
    retrieve_documents,
    trigram_jaccard,
)
from oracles import jaccard


@given(st.text(max_size=20), st.text(max_size=20))
def test_jaccard_matches_oracle(a, b):
    assert trigram_jaccard(a, b) == jaccard(a, b)


@given(st.text(max_size=20), st.text(max_size=20))
def test_jaccard_symmetric_and_bounded(a, b):
    assert trigram_jaccard(a, b) == trigram_jaccard(b, a)
    assert 0.0 <= trigram_jaccard(a, b) <= 1.0


def test_trigrams_short_strings():
    assert char_trigrams("ab") == {"ab"}
    assert char_trigrams("") == frozenset()
    assert char_trigrams("Son") == {"son"}


def test_child_top1_matches_pairwise_oracle(family_kg):
    vocab = family_kg.sorted_relations()
    best = max(jaccard("child", r) for r in vocab)
    expected = min(r for r in vocab if jaccard("child", r) == best)
    assert LexicalSimilarity().top_k("child", vocab, 1) == [(expected, best)]


def test_self_similarity_ranks_first(family_kg):
    vocab = family_kg.sorted_relations()
    for r in vocab:
        top = LexicalSimilarity().top_k(r, vocab, 1)[0]
        assert top == (r, 1.0)


def test_k_beyond_candidates_is_full_ranking(family_kg):
    vocab = family_kg.sorted_relations()
    ranked = LexicalSimilarity().top_k("prefer", vocab, 100)
    assert sorted(r for r, _ in ranked) == vocab
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)


@given(st.text(min_size=1, max_size=10), st.lists(st.text(min_size=1, max_size=10), min_size=1, max_size=8), st.integers(1, 9))
def test_top_k_is_prefix_of_full_ranking(query, candidates, k):
    sim = LexicalSimilarity()
    full = sim.top_k(query, candidates, len(candidates))
    assert sim.top_k(query, candidates, k) == full[:k]


def test_relation_phrase_mode():
    assert relation_phrase("prefer_dining_location") == "prefer dining location"
    sim = LexicalSimilarity(relation_text="phrase")
    assert sim.top_k("dining location", ["prefer_dining_location", "son"], 1)[0][0] == "prefer_dining_location"


def test_rank_rejects_empty_candidates():
    with pytest.raises(ValueError):
        LexicalSimilarity().rank("x", [])


TABLE = {"a": [1.0, 0.0], "b": [0.6, 0.8], "c": [0.0, 2.0]}


def test_vector_file_cosine():
    sim = VectorFileSimilarity(TABLE)
    assert sim.scores("a", ["a", "b", "c"]) == pytest.approx([1.0, 0.6, 0.0])
    assert [c for c, _ in sim.top_k("c", ["a", "b", "c"], 3)] == ["c", "b", "a"]


def test_vector_file_cache_is_transparent():
    sim = VectorFileSimilarity(TABLE)
    first = sim.scores("b", ["a", "c"])
    assert set(sim.cache) == {"a", "b", "c"}
    assert sim.scores("b", ["a", "c"]) == first


def test_vector_file_fails_fast(tmp_path):
    with pytest.raises(ProviderError, match="required"):
        VectorFileSimilarity(TABLE, required=["a", "zzz"])
    with pytest.raises(ProviderError):
        VectorFileSimilarity(TABLE).scores("zzz", ["a"])
    with pytest.raises(ProviderError, match="dimension"):
        VectorFileSimilarity({"a": [1.0], "b": [1.0, 2.0]})
    with pytest.raises(ProviderError, match="norm"):
        VectorFileSimilarity({"a": [0.0, 0.0]}).scores("a", ["a"])
    path = tmp_path / "vec.json"
    path.write_text(json.dumps(TABLE))
    assert make_provider({"backend": "vector_file", "path": str(path)}).top_k("a", ["b", "a"], 1)[0][0] == "a"


def embedding_transport(log, fail_first=0, status=503):
    state = {"n": 0}

    def handler(request):
        state["n"] += 1
        body = json.loads(request.content)
        log.append(body)
        if state["n"] <= fail_first:
            return httpx.Response(status, text="unavailable")
        data = [{"embedding": TABLE[t]} for t in body["input"]]
        return httpx.Response(200, json={"data": data})

    return httpx.MockTransport(handler)


def test_remote_backend_round_trip():
    log = []
    sim = RemoteEmbeddingSimilarity("http://embed.test/v1/embeddings", "toy", transport=embedding_transport(log), backoff=0)
    assert sim.top_k("a", ["c", "b"], 1) == [("b", pytest.approx(0.6))]
    assert log == [{"input": ["a", "c", "b"], "model": "toy"}]
    sim.top_k("a", ["b"], 1)
    assert len(log) == 1  # served from cache


def test_remote_backend_retries_then_succeeds():
    log = []
    sim = RemoteEmbeddingSimilarity("http://embed.test", "toy", transport=embedding_transport(log, fail_first=2),
                                    retries=3, backoff=0)
    assert sim.scores("a", ["a"]) == pytest.approx([1.0])
    assert len(log) == 3


def test_remote_backend_reports_diagnostics():
    sim = RemoteEmbeddingSimilarity("http://embed.test", "toy", transport=embedding_transport([], fail_first=99),
                                    retries=1, backoff=0)
    with pytest.raises(ProviderError, match="HTTP 503"):
        sim.scores("a", ["b"])
    no_retry = []
    bad = RemoteEmbeddingSimilarity("http://embed.test", "toy",
                                    transport=embedding_transport(no_retry, fail_first=99, status=400), backoff=0)
    with pytest.raises(ProviderError):
        bad.scores("a", ["b"])
    assert len(no_retry) == 1


def test_retrieve_documents(family_kg):
    docs = links_to_documents(family_kg)
    top = retrieve_documents("Mr. Smith phone_number", docs, 1, LexicalSimilarity())
    # oracle: the document with the best pairwise trigram score, ties by text
    best = min(docs, key=lambda d: (-jaccard("Mr. Smith phone_number", d.text), d.text))
    assert top == [best]
    assert top[0].source_triple.as_list() == ["Mr. Smith", "phone_number", "phone_number_0002"]
    everything = retrieve_documents("Bob", docs, len(docs), LexicalSimilarity())
    assert sorted(d.id for d in everything) == sorted(d.id for d in docs)
    assert retrieve_documents("Bob", [], 3, LexicalSimilarity()) == []
    with pytest.raises(ValueError):
        retrieve_documents("Bob", docs, 0, LexicalSimilarity())


def test_make_provider_default_is_lexical():
    assert isinstance(make_provider(None), LexicalSimilarity)
