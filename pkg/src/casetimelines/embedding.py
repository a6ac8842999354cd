"""Text embedders and cosine distance.

``TrigramEmbedder`` is the offline default. ``RemoteEmbedder`` talks to a
JSON embedding endpoint; ``SentenceTransformerEmbedder`` runs a local
sentence-transformers model (e.g. ``pritamdeka/S-PubMedBert-MS-MARCO``).
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import requests

from .errors import (DimensionMismatch, TransientTransportError, TransportError, ZeroVector,
                     AuthError)

logger = logging.getLogger(__name__)

EMBED_API_KEY_ENV = "CASETIMELINES_EMBED_API_KEY"
EMBED_ENDPOINT_ENV = "CASETIMELINES_EMBED_ENDPOINT"
DEFAULT_EMBEDDING_MODEL = "pritamdeka/S-PubMedBert-MS-MARCO"


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    components: np.ndarray
    backend_tag: str

    def __post_init__(self):
        if self.components.ndim != 1 or self.components.size == 0:
            raise ValueError("embedding must be a non-empty 1-D array")


class Embedder(Protocol):
    tag: str

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        ...


def trigrams(text: str) -> Counter:
    low = text.lower()
    if len(low) < 3:
        return Counter([low]) if low else Counter()
    return Counter(low[i:i + 3] for i in range(len(low) - 2))


class TrigramEmbedder:
    """L2-normalised character-trigram counts, hashed into ``dim`` buckets.

    Strings shorter than three characters count as a single gram so no
    non-empty text maps to the zero vector.
    """

    def __init__(self, dim: int = 1 << 16):
        self.dim = dim
        self.tag = "trigram-fallback"

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def vector(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for gram, count in trigrams(text).items():
            v[self._bucket(gram)] += count
        norm = np.linalg.norm(v)
        return v / norm if norm else v

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        return [EmbeddingVector(self.vector(t), self.tag) for t in texts]


class RemoteEmbedder:
    """Batched client for an embedding endpoint.

    Request: ``{"model": ..., "input": [texts]}``. Response: either
    ``{"data": [{"embedding": [...]}, ...]}`` or ``{"embeddings": [[...], ...]}``.
    Vectors are cached in memory per text.
    """

    def __init__(self, endpoint_url: str | None = None, model: str = DEFAULT_EMBEDDING_MODEL,
                 batch_size: int = 64, max_retries: int = 3, timeout: float = 60.0,
                 backoff_base: float = 1.0, session: requests.Session | None = None,
                 api_key: str | None = None):
        self.endpoint_url = endpoint_url or os.environ.get(EMBED_ENDPOINT_ENV, "")
        if not self.endpoint_url:
            raise TransportError(f"no embedding endpoint; set {EMBED_ENDPOINT_ENV}")
        self.model = model
        self.tag = model
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.timeout = timeout
        self.backoff_base = backoff_base
        self.session = session or requests.Session()
        self._api_key = api_key if api_key is not None else os.environ.get(EMBED_API_KEY_ENV)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _post(self, batch: list[str]) -> list[np.ndarray]:
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        for attempt in range(self.max_retries + 1):
            try:
                resp = self.session.post(self.endpoint_url, json={"model": self.model, "input": batch},
                                         headers=headers, timeout=self.timeout)
                if resp.status_code in (401, 403):
                    raise AuthError(f"embedding endpoint refused credentials (HTTP {resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise TransientTransportError(f"HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                try:
                    doc = resp.json()
                    if "data" in doc:
                        rows = [item["embedding"]
                                for item in sorted(doc["data"], key=lambda d: d.get("index", 0))]
                    else:
                        rows = doc["embeddings"]
                except (ValueError, KeyError, TypeError, AttributeError) as exc:
                    raise TransportError("unexpected embedding response shape") from exc
                if len(rows) != len(batch):
                    raise TransportError(f"asked for {len(batch)} vectors, got {len(rows)}")
                return [np.asarray(r, dtype=float) for r in rows]
            except (requests.RequestException, TransientTransportError) as exc:
                if attempt == self.max_retries:
                    raise TransportError(f"embedding request failed: {exc}") from exc
                time.sleep(self.backoff_base * 2 ** attempt)
        raise AssertionError("unreachable")

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        with self._lock:
            missing = list(dict.fromkeys(t for t in texts if t not in self._cache))
        for i in range(0, len(missing), self.batch_size):
            batch = missing[i:i + self.batch_size]
            vectors = self._post(batch)
            with self._lock:
                self._cache.update(zip(batch, vectors))
        return [EmbeddingVector(self._cache[t], self.tag) for t in texts]


class SentenceTransformerEmbedder:
    """Local mean-pooled sentence-transformers model (loaded lazily)."""

    def __init__(self, model: str = DEFAULT_EMBEDDING_MODEL):
        self.model_name = model
        self.tag = model
        self._model = None

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if self._model is None:
            from sentence_transformers import SentenceTransformer
            self._model = SentenceTransformer(self.model_name)
        arr = self._model.encode(list(texts), convert_to_numpy=True)
        return [EmbeddingVector(np.asarray(row, dtype=float), self.tag) for row in arr]


def cosine_distance(u: EmbeddingVector | np.ndarray, v: EmbeddingVector | np.ndarray) -> float:
    """``1 - cos(u, v)``, clipped to [0, 2] against rounding."""
    a = u.components if isinstance(u, EmbeddingVector) else np.asarray(u, dtype=float)
    b = v.components if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine distance undefined for a zero vector")
    return float(np.clip(1.0 - np.dot(a, b) / (na * nb), 0.0, 2.0))


def cosine_distance_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if rows.shape[1] != cols.shape[1]:
        raise DimensionMismatch(f"{rows.shape[1]} vs {cols.shape[1]}")
    rn = np.linalg.norm(rows, axis=1, keepdims=True)
    cn = np.linalg.norm(cols, axis=1, keepdims=True)
    if (rn == 0).any() or (cn == 0).any():
        raise ZeroVector("cosine distance undefined for a zero vector")
    return np.clip(1.0 - (rows / rn) @ (cols / cn).T, 0.0, 2.0)
