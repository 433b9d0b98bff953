"""Pluggable text embedders.

Two implementations share one contract: a deterministic local embedder
(hashed bag-of-tokens, unit norm) that makes retrieval tests meaningful
without any model, and a client for a remote embedding service speaking
the common ``/embeddings`` JSON wire format.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from typing import Protocol, Sequence, runtime_checkable

import httpx
import numpy as np

from .errors import IntegrityError, TransportError

DEFAULT_DIMS = 64


@runtime_checkable
class Embedder(Protocol):
    dims: int
    unit_norm: bool
    query_prefix: str
    passage_prefix: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def embed_texts(embedder: Embedder, texts: Sequence[str]) -> np.ndarray:
    """Embed a batch of texts, enforcing the shared embedder contract.

    Returns a (len(texts), dims) float32 matrix, order-aligned with the
    input. Empty batches and empty texts are rejected up front so a bad
    index is named instead of silently producing a zero vector.
    """
    if len(texts) == 0:
        raise ValueError("texts must be non-empty")
    for i, text in enumerate(texts):
        if not text or not text.strip():
            raise ValueError(f"empty text at index {i}")
    vectors = embedder.embed(texts)
    if vectors.shape != (len(texts), embedder.dims):
        raise IntegrityError(
            f"embedder returned shape {vectors.shape}, expected {(len(texts), embedder.dims)}"
        )
    if not np.all(np.isfinite(vectors)):
        raise IntegrityError("embedder returned non-finite values")
    return vectors


def embed_query(embedder: Embedder, text: str) -> np.ndarray:
    return embed_texts(embedder, [embedder.query_prefix + text])[0]


def embed_passages(embedder: Embedder, texts: Sequence[str]) -> np.ndarray:
    return embed_texts(embedder, [embedder.passage_prefix + t for t in texts])


class HashingEmbedder:
    """Deterministic test embedder: hashed token counts, L2-normalized.

    Lowercases, splits on whitespace, hashes each token into one of
    ``dims`` buckets with a fixed seed, accumulates counts and
    normalizes. A pure function of (text, dims, seed), so identical text
    always yields an identical unit-norm vector, and texts with token
    overlap land near each other.
    """

    unit_norm = True

    def __init__(
        self,
        dims: int = DEFAULT_DIMS,
        seed: int = 0,
        query_prefix: str = "",
        passage_prefix: str = "",
    ):
        if dims < 1:
            raise ValueError(f"dims must be >= 1, got {dims}")
        self.dims = dims
        self.seed = seed
        self.query_prefix = query_prefix
        self.passage_prefix = passage_prefix
        self._salt = seed.to_bytes(8, "little", signed=False)
        self._bucket_cache: dict[str, int] = {}

    def _bucket(self, token: str) -> int:
        bucket = self._bucket_cache.get(token)
        if bucket is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=self._salt).digest()
            bucket = int.from_bytes(digest, "little") % self.dims
            self._bucket_cache[token] = bucket
        return bucket

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dims), dtype=np.float32)
        for row, text in enumerate(texts):
            for token in text.lower().split():
                out[row, self._bucket(token)] += 1.0
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class RemoteEmbedder:
    """Client for an ``/embeddings`` HTTP service.

    Requests are sent in batches (default 64) with exponential backoff
    on transient failures; after ``max_retries`` retries a TransportError
    carrying the attempt count is raised. Concurrent callers are bounded
    by ``max_in_flight``.

    Endpoint, model name and auth token come from the constructor or the
    RAGSCALE_EMBED_ENDPOINT / RAGSCALE_EMBED_MODEL / RAGSCALE_EMBED_TOKEN
    environment variables.
    """

    unit_norm = False

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_token: str | None = None,
        dims: int | None = None,
        batch_size: int = 64,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 30.0,
        max_in_flight: int = 4,
        query_prefix: str = "",
        passage_prefix: str = "",
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint or os.environ.get("RAGSCALE_EMBED_ENDPOINT", "")
        if not self.endpoint:
            raise ValueError("remote embedder needs an endpoint (RAGSCALE_EMBED_ENDPOINT)")
        self.model = model or os.environ.get("RAGSCALE_EMBED_MODEL", "default")
        self.api_token = api_token or os.environ.get("RAGSCALE_EMBED_TOKEN", "")
        self.dims = dims or 0  # inferred from the first response when 0
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.query_prefix = query_prefix
        self.passage_prefix = passage_prefix
        self._gate = threading.Semaphore(max_in_flight)
        headers = {"Authorization": f"Bearer {self.api_token}"} if self.api_token else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            rows.extend(self._request_batch(batch))
        if self.dims == 0 and rows:
            self.dims = len(rows[0])
        for i, row in enumerate(rows):
            if len(row) != self.dims:
                raise IntegrityError(
                    f"vector {i} has {len(row)} dims, expected {self.dims}"
                )
        return np.asarray(rows, dtype=np.float32)

    def _request_batch(self, batch: list[str]) -> list[list[float]]:
        payload = {"model": self.model, "input": batch}
        attempts = 0
        while True:
            attempts += 1
            try:
                with self._gate:
                    response = self._client.post(self.endpoint, json=payload)
            except httpx.HTTPError as exc:
                if attempts > self.max_retries:
                    raise TransportError(f"embedding request failed: {exc}", attempts) from exc
                time.sleep(self.backoff_base * 2 ** (attempts - 1))
                continue
            if response.status_code == 200:
                data = response.json()["data"]
                if len(data) != len(batch):
                    raise IntegrityError(
                        f"service returned {len(data)} vectors for {len(batch)} texts"
                    )
                return [item["embedding"] for item in data]
            if response.status_code in (429, 500, 502, 503, 504) and attempts <= self.max_retries:
                time.sleep(self.backoff_base * 2 ** (attempts - 1))
                continue
            raise TransportError(
                f"embedding request failed with status {response.status_code}", attempts
            )

    def close(self) -> None:
        self._client.close()
