"""Edited-fact memory with dense top-1 retrieval.

The default embedder is a hashed term-frequency vector: tokens are
lowercased word pieces, hashed with 32-bit FNV-1a into ``dim`` buckets and
L2-normalised. Any object with ``embed_many(texts) -> ndarray`` can stand in
for it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .errors import HopEditError, TransportError
from .kg import Edit, KnowledgeGraph
from .templates import RenderedText, render_edit_statement

DEFAULT_DIM = 256
# scores are compared after rounding so equal cosines tie exactly
SCORE_DECIMALS = 12

_TOKEN = re.compile(r"\w+", re.UNICODE)
_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


def fnv1a_32(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class Embedder(Protocol):
    dim: int

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...


class HashEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise HopEditError("embedding dimension must be positive")
        self.dim = dim
        self._bucket_cache: dict[str, int] = {}

    def _bucket(self, token: str) -> int:
        b = self._bucket_cache.get(token)
        if b is None:
            b = fnv1a_32(token.encode("utf-8")) % self.dim
            self._bucket_cache[token] = b
        return b

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text):
            v[self._bucket(tok)] += 1.0
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.embed(t) for t in texts])


class HttpEmbedder:
    """Client for an external service: ``{texts}`` -> ``{vectors}``."""

    def __init__(self, endpoint: str, dim: int, timeout: float = 60.0, client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.dim = dim
        self._client = client or httpx.Client(timeout=timeout)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        try:
            resp = self._client.post(self.endpoint, json={"texts": list(texts)})
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        vectors = resp.json().get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise HopEditError("embedding service returned the wrong number of vectors")
        arr = np.asarray(vectors, dtype=np.float64).reshape(len(texts), -1) if texts else np.zeros((0, self.dim))
        if arr.shape[1] != self.dim:
            raise HopEditError(f"embedding service returned dimension {arr.shape[1]}, expected {self.dim}")
        if not np.all(np.isfinite(arr)):
            raise HopEditError("embedding service returned non-finite values")
        norms = np.linalg.norm(arr, axis=1, keepdims=True)
        return np.divide(arr, norms, out=np.zeros_like(arr), where=norms > 0)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


_default = HashEmbedder()


def embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    return (_default if dim == DEFAULT_DIM else HashEmbedder(dim)).embed(text)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class MemoryEntry:
    id: int
    statement: RenderedText
    edit: Edit

    @property
    def text(self) -> str:
        return self.statement.text


class EditMemory:
    """Immutable list of edit statements plus their embedding matrix."""

    def __init__(self, entries: Sequence[MemoryEntry], vectors: np.ndarray, embedder: Embedder):
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise HopEditError("statement ids must be unique")
        if ids != sorted(ids):
            raise HopEditError("entries must be in statement-id order")
        self.entries = tuple(entries)
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.embedder = embedder
        self._by_key = {}
        for e in self.entries:
            self._by_key.setdefault(e.edit.key, e)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, s: str, r: str) -> MemoryEntry | None:
        return self._by_key.get((s, r))


def build_memory(edits: Sequence[Edit], g: KnowledgeGraph, embedder: Embedder | None = None) -> EditMemory:
    embedder = embedder or _default
    statements = [render_edit_statement(e, g) for e in edits]
    entries = [MemoryEntry(i, st, e) for i, (st, e) in enumerate(zip(statements, edits))]
    vectors = embedder.embed_many([s.text for s in statements]) if statements else np.zeros((0, embedder.dim))
    return EditMemory(entries, np.ascontiguousarray(vectors, dtype=np.float64), embedder)


def _query_vector(m: EditMemory, query: str) -> np.ndarray:
    emb = m.embedder
    if hasattr(emb, "embed"):
        return emb.embed(query)
    return emb.embed_many([query])[0]


def retrieve_top1(m: EditMemory, query: str) -> tuple[MemoryEntry, float] | None:
    """Most similar statement by cosine, ties to the lowest id; None if empty."""
    if not m.entries:
        return None
    q = _query_vector(m, query)
    scores = np.round(m.vectors @ q, SCORE_DECIMALS)
    # argmax returns the first maximum, and entries are stored in id order
    best = int(np.argmax(scores))
    return m.entries[best], float(np.clip(scores[best], -1.0, 1.0))


def retrieve_linear(m: EditMemory, query: str) -> tuple[MemoryEntry, float] | None:
    """Reference scan, one cosine at a time."""
    if not m.entries:
        return None
    q = _query_vector(m, query)
    best, best_score = None, -np.inf
    for entry, vec in sorted(zip(m.entries, m.vectors), key=lambda p: p[0].id):
        score = round(cosine(vec, q), SCORE_DECIMALS)
        if score > best_score:
            best, best_score = entry, score
    return best, best_score


def retrieve_exact(m: EditMemory, s: str, r: str) -> tuple[MemoryEntry, float] | None:
    """Keyed lookup on ``(s, r)``; the idealised retriever."""
    entry = m.lookup(s, r)
    return (entry, 1.0) if entry is not None else None
