"""Scale-parameterized retrieval: fan-out, merge, chunk, rerank, assemble.

A query fans out to the active shards, per-shard top-k lists merge into
a global top-k under (score desc, doc_id asc), the winning documents are
cut into overlapping token windows, chunks are reranked against the
query, and the best m chunks become the evidence bundle handed to a
generator. All hyper-parameters stay fixed across corpus scales; scale
n=0 short-circuits to an empty closed-book bundle.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .corpus import ActiveScale, CorpusStore, Document, QAItem, ShardOrder, ShardPlan, active_shards
from .embed import Embedder, embed_passages, embed_query
from .errors import ConfigError, MissingArtifactError
from .index import ScoredDoc, ShardIndex, search

DEFAULT_TOP_K_DOCS = 10
DEFAULT_EVIDENCE_CHUNKS = 8
DEFAULT_CHUNK_TOKENS = 256
DEFAULT_OVERLAP_TOKENS = 64


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    token_span: tuple[int, int]
    rerank_score: float = float("nan")

    @property
    def start(self) -> int:
        return self.token_span[0]


@dataclass(frozen=True)
class EvidenceBundle:
    query_id: str
    n: int
    order: ShardOrder
    chunks: tuple[Chunk, ...]
    rendered_context: str

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "n": self.n,
            "order": self.order,
            "chunks": [
                {
                    "chunk_id": c.chunk_id,
                    "doc_id": c.doc_id,
                    "text": c.text,
                    "token_span": list(c.token_span),
                    "rerank_score": c.rerank_score,
                }
                for c in self.chunks
            ],
            "rendered_context": self.rendered_context,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvidenceBundle":
        chunks = tuple(
            Chunk(
                chunk_id=c["chunk_id"],
                doc_id=c["doc_id"],
                text=c["text"],
                token_span=(c["token_span"][0], c["token_span"][1]),
                rerank_score=c["rerank_score"],
            )
            for c in data["chunks"]
        )
        return cls(
            query_id=data["query_id"],
            n=data["n"],
            order=data["order"],
            chunks=chunks,
            rendered_context=data["rendered_context"],
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def empty_bundle(query_id: str, scale: ActiveScale) -> EvidenceBundle:
    return EvidenceBundle(
        query_id=query_id, n=scale.n, order=scale.order, chunks=(), rendered_context=""
    )


def retrieve_topk(
    plan: ShardPlan,
    scale: ActiveScale,
    indices: Mapping[int, ShardIndex],
    query: QAItem,
    embedder: Embedder,
    k: int = DEFAULT_TOP_K_DOCS,
    executor: Executor | None = None,
) -> list[ScoredDoc]:
    """Global top-k over the active shards, merged from per-shard top-k.

    Per-shard searches may run concurrently; the merge is a deterministic
    reduction ordered by (score desc, doc_id asc), so completion order
    never shows through.
    """
    if scale.n == 0:
        raise ValueError("retrieve_topk requires n >= 1; n=0 is the closed-book path")
    shards = active_shards(plan, scale)
    for shard_index in shards:
        if shard_index not in indices:
            raise MissingArtifactError(f"no index available for active shard {shard_index}")
    query_vector = embed_query(embedder, query.question)
    if executor is not None and len(shards) > 1:
        results = list(
            executor.map(lambda s: search(indices[s], query_vector, k), shards)
        )
    else:
        results = [search(indices[s], query_vector, k) for s in shards]
    merged = [doc for shard_hits in results for doc in shard_hits]
    merged.sort(key=lambda d: (-d.score, d.doc_id))
    return merged[:k]


def chunk_documents(
    docs: Sequence[Document],
    chunk_tokens: int = DEFAULT_CHUNK_TOKENS,
    overlap_tokens: int = DEFAULT_OVERLAP_TOKENS,
) -> list[Chunk]:
    """Cut documents into overlapping whitespace-token windows.

    Windows start at multiples of stride = chunk_tokens - overlap_tokens;
    the window that reaches a document's end is the last one and may be
    shorter. Output order is (document order, start ascending).
    """
    if chunk_tokens < 1:
        raise ConfigError(f"chunk_tokens must be >= 1, got {chunk_tokens}")
    if not 0 <= overlap_tokens < chunk_tokens:
        raise ConfigError(
            f"overlap_tokens must satisfy 0 <= overlap < chunk_tokens, "
            f"got overlap={overlap_tokens}, chunk={chunk_tokens}"
        )
    stride = chunk_tokens - overlap_tokens
    chunks: list[Chunk] = []
    for doc in docs:
        tokens = doc.text.split()
        start = 0
        while start < len(tokens):
            end = min(start + chunk_tokens, len(tokens))
            chunks.append(
                Chunk(
                    chunk_id=f"{doc.doc_id}:{start}",
                    doc_id=doc.doc_id,
                    text=" ".join(tokens[start:end]),
                    token_span=(start, end),
                )
            )
            if start + chunk_tokens >= len(tokens):
                break
            start += stride
    return chunks


class Reranker(Protocol):
    def rerank(self, query: QAItem, chunks: Sequence[Chunk]) -> list[Chunk]: ...


def rerank(query: QAItem, chunks: Sequence[Chunk], embedder: Embedder) -> list[Chunk]:
    """Order chunks by cosine(query, chunk) descending, ties broken by
    (doc_id asc, start asc); rerank_score is filled in."""
    if not chunks:
        raise ValueError("rerank requires at least one chunk")
    query_vector = embed_query(embedder, query.question)
    query_vector = query_vector / np.linalg.norm(query_vector)
    vectors = embed_passages(embedder, [c.text for c in chunks])
    norms = np.linalg.norm(vectors, axis=1)
    norms[norms == 0] = 1.0
    scores = (vectors / norms[:, None]) @ query_vector
    scored = [
        dataclasses.replace(chunk, rerank_score=float(score))
        for chunk, score in zip(chunks, scores)
    ]
    scored.sort(key=lambda c: (-c.rerank_score, c.doc_id, c.start))
    return scored


class CosineReranker:
    """Default reranker: the retrieval embedder scoring chunk vs query."""

    def __init__(self, embedder: Embedder):
        self.embedder = embedder

    def rerank(self, query: QAItem, chunks: Sequence[Chunk]) -> list[Chunk]:
        return rerank(query, chunks, self.embedder)


def assemble_evidence(
    query_id: str,
    scale: ActiveScale,
    ranked_chunks: Sequence[Chunk],
    m: int = DEFAULT_EVIDENCE_CHUNKS,
) -> EvidenceBundle:
    """Keep the first min(m, len) ranked chunks and render the context:
    rank-prefixed "[i] " lines separated by one blank line."""
    kept = tuple(ranked_chunks[:m])
    rendered = "\n".join(f"[{i}] {chunk.text}\n" for i, chunk in enumerate(kept, start=1))
    return EvidenceBundle(
        query_id=query_id, n=scale.n, order=scale.order, chunks=kept, rendered_context=rendered
    )


@dataclass(frozen=True)
class RetrievalParams:
    k: int = DEFAULT_TOP_K_DOCS
    m: int = DEFAULT_EVIDENCE_CHUNKS
    chunk_tokens: int = DEFAULT_CHUNK_TOKENS
    overlap_tokens: int = DEFAULT_OVERLAP_TOKENS
    index_kind: str = "exact"


class Retriever:
    """End-to-end evidence pipeline bound to one plan and index set."""

    def __init__(
        self,
        plan: ShardPlan,
        indices: Mapping[int, ShardIndex],
        corpus: CorpusStore,
        embedder: Embedder,
        params: RetrievalParams = RetrievalParams(),
        reranker: Reranker | None = None,
        executor: Executor | None = None,
    ):
        self.plan = plan
        self.indices = indices
        self.corpus = corpus
        self.embedder = embedder
        self.params = params
        self.reranker = reranker or CosineReranker(embedder)
        self.executor = executor

    def evidence(self, query: QAItem, scale: ActiveScale) -> EvidenceBundle:
        if scale.n == 0:
            return empty_bundle(query.query_id, scale)
        hits = retrieve_topk(
            self.plan, scale, self.indices, query, self.embedder,
            k=self.params.k, executor=self.executor,
        )
        docs = [self.corpus.get(hit.doc_id) for hit in hits]
        chunks = chunk_documents(docs, self.params.chunk_tokens, self.params.overlap_tokens)
        if not chunks:
            return empty_bundle(query.query_id, scale)
        ranked = self.reranker.rerank(query, chunks)
        return assemble_evidence(query.query_id, scale, ranked, self.params.m)
