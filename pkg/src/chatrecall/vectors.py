"""Embedders, a flat cosine index over responses, and metadata-imbued response text."""
from __future__ import annotations

import hashlib
import os
import re
import struct
import time as _time
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

from .chatlog import Response
from .temporal import format_date, format_time

DEFAULT_DIM = 256
DEFAULT_K = 10
_INDEX_MAGIC = b"CRVI"
_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmbedError(RuntimeError):
    def __init__(self, message: str, retries: int = 0):
        self.retries = retries
        super().__init__(message)


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Signed hashed bag-of-words projection.

    Offline and deterministic: each lower-cased alphanumeric token is hashed
    (BLAKE2b keyed by ``seed``) to a bucket and a sign. Texts sharing
    vocabulary therefore land closer in cosine terms.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)
        self._cache: dict[str, tuple[int, float]] = {}

    def _bucket(self, token: str) -> tuple[int, float]:
        hit = self._cache.get(token)
        if hit is None:
            digest = hashlib.blake2b(token.encode(), digest_size=8, key=self._key).digest()
            value = int.from_bytes(digest, "little")
            hit = (value % self.dim, 1.0 if (value >> 63) & 1 else -1.0)
            self._cache[token] = hit
        return hit

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmbedError("cannot embed empty text")
        vec = np.zeros(self.dim)
        for token in _TOKEN_RE.findall(text.lower()):
            bucket, sign = self._bucket(token)
            vec[bucket] += sign
        if not np.any(vec):
            raise EmbedError(f"text has no embeddable tokens: {text!r}")
        return vec

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.embed(t) for t in texts])


class HttpEmbedder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint.

    Configured from ``CHATRECALL_EMBED_URL`` / ``CHATRECALL_EMBED_MODEL`` /
    ``CHATRECALL_EMBED_KEY`` when arguments are omitted.
    """

    def __init__(self, endpoint: str | None = None, model: str | None = None, api_key: str | None = None,
                 retries: int = 1, timeout: float = 30.0, client: httpx.Client | None = None):
        self.endpoint = endpoint or os.environ.get("CHATRECALL_EMBED_URL")
        if not self.endpoint:
            raise ValueError("no embedding endpoint configured")
        self.model = model or os.environ.get("CHATRECALL_EMBED_MODEL", "multi-qa-mpnet-base-dot-v1")
        self.api_key = api_key or os.environ.get("CHATRECALL_EMBED_KEY")
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout)
        self.dim = 0

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if any(not t or not t.strip() for t in texts):
            raise EmbedError("cannot embed empty text")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.endpoint, json={"model": self.model, "input": list(texts)},
                                         headers=headers)
                resp.raise_for_status()
                payload = resp.json()
                rows = payload["data"] if isinstance(payload, dict) else payload
                vecs = np.array([r["embedding"] if isinstance(r, dict) else r for r in rows], dtype=float)
                if vecs.shape[0] != len(texts):
                    raise ValueError("embedding count does not match input count")
                self.dim = vecs.shape[1]
                return vecs
            except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
                last = exc
                if attempt < self.retries:
                    _time.sleep(0.5 * (attempt + 1))
        raise EmbedError(f"embedding service failed: {last}", retries=self.retries)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


class VectorIndex:
    """Flat exact-search index, one vector per response index."""

    def __init__(self, ids: Iterable[int], vectors: np.ndarray, normalized: bool = False):
        ids = np.asarray(list(ids), dtype=np.int64)
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != ids.shape[0]:
            raise ValueError("need one vector per id")
        if len(set(ids.tolist())) != len(ids):
            raise ValueError("ids must be unique")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-norm vector in index")
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.unit = vectors[order] if normalized else vectors[order] / norms[order, None]
        self._pos = {int(i): p for p, i in enumerate(self.ids)}

    @classmethod
    def build(cls, ids: Sequence[int], texts: Sequence[str], embedder: Embedder) -> "VectorIndex":
        return cls(ids, embedder.embed_many(list(texts)))

    @property
    def dim(self) -> int:
        return self.unit.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, rid: int) -> bool:
        return int(rid) in self._pos

    def top_k(self, query_vec: np.ndarray, candidate_ids: Iterable[int] | None = None,
              k: int = DEFAULT_K) -> list[tuple[int, float]]:
        """Candidates ranked by cosine similarity; ties go to the lower response index."""
        if k < 1:
            raise ValueError("k must be at least 1")
        q = np.asarray(query_vec, dtype=float)
        qn = np.linalg.norm(q)
        if qn == 0:
            raise ValueError("zero-norm query")
        if candidate_ids is None:
            positions = np.arange(len(self.ids))
        else:
            try:
                positions = np.array(sorted({self._pos[int(c)] for c in candidate_ids}), dtype=np.int64)
            except KeyError as exc:
                raise IndexError(f"unknown candidate id {exc.args[0]}") from None
        if positions.size == 0:
            return []
        scores = self.unit[positions] @ (q / qn)
        cand_ids = self.ids[positions]
        order = np.lexsort((cand_ids, -scores))[:k]
        return [(int(cand_ids[i]), float(scores[i])) for i in order]

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(_INDEX_MAGIC)
            fh.write(struct.pack("<II", self.dim, len(self.ids)))
            for rid, vec in zip(self.ids, self.unit):
                fh.write(struct.pack("<q", int(rid)))
                fh.write(vec.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        with open(path, "rb") as fh:
            if fh.read(4) != _INDEX_MAGIC:
                raise ValueError(f"{path} is not a vector index file")
            dim, count = struct.unpack("<II", fh.read(8))
            ids = np.empty(count, dtype=np.int64)
            vecs = np.empty((count, dim))
            for i in range(count):
                ids[i] = struct.unpack("<q", fh.read(8))[0]
                vecs[i] = np.frombuffer(fh.read(8 * dim), dtype="<f8")
        return cls(ids, vecs, normalized=True)


def imbue_metadata_text(response: Response) -> str:
    return (
        f"On {response.day_name}, {format_date(response.date, 'mdy')} at {format_time(response.time)} "
        f"(session {response.session_index}), {response.speaker} said: {response.text}"
    )
