"""Text similarity providers for relation retrieval and the document baseline.

Three backends share one ranking contract (:meth:`SimilarityProvider.top_k`):

* :class:`LexicalSimilarity`: character-trigram Jaccard, offline and deterministic.
* :class:`VectorFileSimilarity`: precomputed embeddings from a JSON map.
* :class:`RemoteEmbeddingSimilarity`: an OpenAI-style ``/embeddings`` endpoint.

Rankings sort by non-increasing score, ties broken by candidate text.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from collections.abc import Sequence
from pathlib import Path

import httpx
import numpy as np

from kgetool.kg import Document

log = logging.getLogger(__name__)

EMBED_API_KEY_ENV = "KGETOOL_EMBED_API_KEY"


class ProviderError(RuntimeError):
    """Similarity backend failure (transport, missing vectors, bad payload)."""


def relation_phrase(relation: str) -> str:
    """``prefer_dining_location`` -> ``prefer dining location``."""
    return relation.replace("_", " ")


class SimilarityProvider(ABC):
    backend: str = "abstract"

    def __init__(self, *, relation_text: str = "raw") -> None:
        if relation_text not in ("raw", "phrase"):
            raise ValueError(f"relation_text must be 'raw' or 'phrase', got {relation_text!r}")
        self.relation_text = relation_text

    @abstractmethod
    def scores(self, query: str, candidates: Sequence[str]) -> list[float]:
        """One similarity score per candidate, in candidate order."""

    def prepare(self, text: str) -> str:
        return relation_phrase(text) if self.relation_text == "phrase" else text

    def rank(self, query: str, candidates: Sequence[str]) -> list[tuple[int, float]]:
        """Full ranking as ``(candidate index, score)`` pairs."""
        if not candidates:
            raise ValueError("candidates must be non-empty")
        raw = self.scores(self.prepare(query), [self.prepare(c) for c in candidates])
        order = sorted(range(len(candidates)), key=lambda i: (-raw[i], candidates[i], i))
        return [(i, float(raw[i])) for i in order]

    def top_k(self, query: str, candidates: Sequence[str], k: int) -> list[tuple[str, float]]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        ranked = self.rank(query, candidates)[:k]
        return [(candidates[i], s) for i, s in ranked]


def char_trigrams(text: str) -> frozenset[str]:
    s = text.lower()
    if len(s) < 3:
        return frozenset([s]) if s else frozenset()
    return frozenset(s[i : i + 3] for i in range(len(s) - 2))


def trigram_jaccard(a: str, b: str) -> float:
    ga, gb = char_trigrams(a), char_trigrams(b)
    if not ga and not gb:
        return 1.0
    return len(ga & gb) / len(ga | gb)


class LexicalSimilarity(SimilarityProvider):
    backend = "lexical"

    def scores(self, query: str, candidates: Sequence[str]) -> list[float]:
        return [trigram_jaccard(query, c) for c in candidates]


class _EmbeddingSimilarity(SimilarityProvider):
    """Cosine similarity over unit-normalized vectors, cached per text."""

    def __init__(self, *, relation_text: str = "raw") -> None:
        super().__init__(relation_text=relation_text)
        self.cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @abstractmethod
    def _embed(self, texts: list[str]) -> list[np.ndarray]:
        """Raw (not necessarily normalized) vectors for ``texts``, in order."""

    def vectors(self, texts: Sequence[str]) -> np.ndarray:
        with self._lock:
            missing = list(dict.fromkeys(t for t in texts if t not in self.cache))
        if missing:
            fresh = self._embed(missing)
            if len(fresh) != len(missing):
                raise ProviderError(f"expected {len(missing)} vectors, got {len(fresh)}")
            with self._lock:
                for text, vec in zip(missing, fresh):
                    self.cache.setdefault(text, _unit(vec))
        with self._lock:
            return np.stack([self.cache[t] for t in texts])

    def warm(self, texts: Sequence[str]) -> None:
        self.vectors(list(texts))

    def scores(self, query: str, candidates: Sequence[str]) -> list[float]:
        mat = self.vectors([query, *candidates])
        return (mat[1:] @ mat[0]).tolist()


def _unit(vec) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ProviderError(f"embedding must be a non-empty 1-d vector, got shape {arr.shape}")
    norm = np.linalg.norm(arr)
    if not np.isfinite(norm) or norm == 0.0:
        raise ProviderError("embedding has zero or non-finite norm")
    return arr / norm


class VectorFileSimilarity(_EmbeddingSimilarity):
    """Embeddings read from a JSON object ``{text: [floats], ...}``.

    Pass ``required`` to fail at load time when any text that will be queried
    has no vector; unknown texts at query time raise :class:`ProviderError`.
    """

    backend = "vector_file"

    def __init__(
        self,
        table: dict[str, Sequence[float]],
        *,
        required: Sequence[str] = (),
        relation_text: str = "raw",
    ) -> None:
        super().__init__(relation_text=relation_text)
        self._table = table
        absent = sorted({self.prepare(t) for t in required} - table.keys())
        if absent:
            raise ProviderError(f"vector file lacks {len(absent)} required text(s), e.g. {absent[:3]}")
        dims = {len(v) for v in table.values()}
        if len(dims) > 1:
            raise ProviderError(f"inconsistent vector dimensions: {sorted(dims)}")

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> VectorFileSimilarity:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ProviderError(f"{path}: expected a JSON object mapping text to vector")
        return cls(data, **kwargs)

    def _embed(self, texts: list[str]) -> list[np.ndarray]:
        absent = [t for t in texts if t not in self._table]
        if absent:
            raise ProviderError(f"no vector for {absent[0]!r} ({len(absent)} missing)")
        return [np.asarray(self._table[t], dtype=np.float64) for t in texts]


class RemoteEmbeddingSimilarity(_EmbeddingSimilarity):
    """POSTs ``{"input": [...], "model": ...}`` and reads ``data[i].embedding``."""

    backend = "remote_embedding"

    def __init__(
        self,
        url: str,
        model: str,
        *,
        api_key: str | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 30.0,
        batch_size: int = 64,
        relation_text: str = "raw",
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        super().__init__(relation_text=relation_text)
        self.url = url
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(EMBED_API_KEY_ENV)
        self.retries = retries
        self.backoff = backoff
        self.batch_size = batch_size
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _post(self, batch: list[str]) -> list[np.ndarray]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        errors: list[str] = []
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(
                    self.url, json={"input": batch, "model": self.model}, headers=headers
                )
            except httpx.TransportError as exc:
                errors.append(f"{type(exc).__name__}: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        data = resp.json()["data"]
                        return [np.asarray(item["embedding"], dtype=np.float64) for item in data]
                    except (ValueError, KeyError, TypeError) as exc:
                        raise ProviderError(f"malformed embedding response: {exc}") from exc
                errors.append(f"HTTP {resp.status_code}: {resp.text[:200]}")
                if resp.status_code < 500 and resp.status_code != 429:
                    break
            if attempt < self.retries:
                time.sleep(self.backoff * 2**attempt)
        raise ProviderError(f"embedding request to {self.url} failed: " + "; ".join(errors))

    def _embed(self, texts: list[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for i in range(0, len(texts), self.batch_size):
            out.extend(self._post(texts[i : i + self.batch_size]))
        return out


def retrieve_documents(
    query: str, docs: Sequence[Document], n: int, sim: SimilarityProvider
) -> list[Document]:
    """The ``n`` documents whose text is most similar to ``query``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not docs:
        return []
    ranked = sim.rank(query, [d.text for d in docs])[:n]
    return [docs[i] for i, _ in ranked]


def make_provider(spec: dict | None) -> SimilarityProvider:
    """Build a provider from a config block ``{"backend": ..., ...}``."""
    spec = dict(spec or {})
    backend = spec.pop("backend", "lexical")
    relation_text = spec.pop("relation_text", "raw")
    if backend == "lexical":
        return LexicalSimilarity(relation_text=relation_text)
    if backend == "vector_file":
        return VectorFileSimilarity.from_file(spec["path"], relation_text=relation_text)
    if backend == "remote_embedding":
        return RemoteEmbeddingSimilarity(
            spec["url"],
            spec["model"],
            relation_text=relation_text,
            **{k: spec[k] for k in ("retries", "backoff", "timeout", "batch_size") if k in spec},
        )
    raise ValueError(f"unknown similarity backend {backend!r}")
