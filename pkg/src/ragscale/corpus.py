"""Corpus ingest, balanced random sharding, and scale resolution.

A corpus is partitioned once into N disjoint shards of near-equal size;
a scale n then activates the first n shards (forward order) or the last
n (reversed order). Shard assignment is a seeded global shuffle of the
sorted doc_id list cut into contiguous blocks, so identical
(corpus, seed, N) always reproduces the same plan.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal, Mapping, Sequence

import numpy as np

from .errors import ConflictError, IngestError, IntegrityError, ParseError

ShardOrder = Literal["forward", "reversed"]

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    metadata: Mapping[str, str] | None = None

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.text:
            raise ValueError(f"document {self.doc_id!r}: text must be non-empty")


@dataclass(frozen=True)
class QAItem:
    query_id: str
    question: str
    gold_answers: tuple[str, ...]

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"query {self.query_id!r}: gold_answers must be non-empty")
        for alias in self.gold_answers:
            if not alias.strip():
                raise ValueError(f"query {self.query_id!r}: blank gold answer alias")


class CorpusStore:
    """In-memory document store, persistable as one JSON record per line."""

    def __init__(self):
        self._docs: dict[str, Document] = {}

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def add(self, doc: Document) -> None:
        if doc.doc_id in self._docs:
            raise ConflictError(f"duplicate doc_id {doc.doc_id!r}")
        self._docs[doc.doc_id] = doc

    def get(self, doc_id: str) -> Document:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise IntegrityError(f"document {doc_id!r} not in corpus") from None

    def doc_ids(self) -> list[str]:
        return sorted(self._docs)

    def __iter__(self) -> Iterator[Document]:
        for doc_id in self.doc_ids():
            yield self._docs[doc_id]

    def digest(self) -> str:
        """Content digest over documents in sorted doc_id order."""
        h = hashlib.sha256()
        for doc in self:
            h.update(_canonical_json(_doc_record(doc)).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for doc in self:
                fh.write(_canonical_json(_doc_record(doc)))
                fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusStore":
        with Path(path).open("r", encoding="utf-8") as fh:
            return ingest_corpus(_parse_record_lines(fh))


def _doc_record(doc: Document) -> dict:
    record = {"doc_id": doc.doc_id, "text": doc.text}
    if doc.metadata:
        record["metadata"] = dict(doc.metadata)
    return record


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _parse_record_lines(lines: Iterable[str]) -> Iterator[dict]:
    for line in lines:
        line = line.strip()
        if line:
            yield json.loads(line)


def ingest_corpus(record_stream: Iterable[Mapping]) -> CorpusStore:
    """Build a corpus from raw document records.

    Each record must carry ``doc_id`` and ``text``. Errors name the
    1-based record ordinal; duplicate doc_ids are rejected, not deduped.
    """
    store = CorpusStore()
    for ordinal, record in enumerate(record_stream, start=1):
        for key in ("doc_id", "text"):
            if not record.get(key):
                raise IngestError(f"record {ordinal}: missing or empty field {key!r}")
        doc = Document(
            doc_id=str(record["doc_id"]),
            text=str(record["text"]),
            metadata=record.get("metadata"),
        )
        if doc.doc_id in store:
            raise ConflictError(f"record {ordinal}: duplicate doc_id {doc.doc_id!r}")
        store.add(doc)
    return store


def load_qa(path: str | Path) -> list[QAItem]:
    """Load QA items from a file of newline-delimited JSON records.

    Records need ``query_id``, ``question`` and a non-empty
    ``gold_answers`` list; file order and alias order are preserved.
    """
    items: list[QAItem] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for ordinal, record in enumerate(_parse_record_lines(fh), start=1):
            query_id = str(record.get("query_id") or "")
            if not query_id:
                raise ParseError(f"QA record {ordinal}: missing query_id")
            if query_id in seen:
                raise ConflictError(f"QA record {ordinal}: duplicate query_id {query_id!r}")
            golds = record.get("gold_answers") or []
            if not golds:
                raise ParseError(f"QA record {ordinal}: empty gold_answers")
            try:
                item = QAItem(
                    query_id=query_id,
                    question=str(record.get("question") or ""),
                    gold_answers=tuple(str(a) for a in golds),
                )
            except ValueError as exc:
                raise ParseError(f"QA record {ordinal}: {exc}") from None
            seen.add(query_id)
            items.append(item)
    return items


def save_qa(items: Sequence[QAItem], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for item in items:
            record = {
                "query_id": item.query_id,
                "question": item.question,
                "gold_answers": list(item.gold_answers),
            }
            fh.write(_canonical_json(record))
            fh.write("\n")


def qa_digest(items: Sequence[QAItem]) -> str:
    h = hashlib.sha256()
    for item in items:
        h.update(item.query_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(item.question.encode("utf-8"))
        h.update(b"\x00")
        for alias in item.gold_answers:
            h.update(alias.encode("utf-8"))
            h.update(b"\x01")
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True)
class ShardPlan:
    """Balanced random partition of a corpus into ``num_shards`` shards.

    Shard indices are 1-based. ``members[i]`` holds the doc_ids of shard
    i+1; the first (|corpus| mod N) shards carry one extra document so
    sizes are deterministic and spread at most 1.
    """

    seed: int
    num_shards: int
    members: tuple[tuple[str, ...], ...]
    doc_order_digest: str
    assignment: Mapping[str, int] = field(repr=False, default_factory=dict)

    @property
    def shard_sizes(self) -> list[int]:
        return [len(m) for m in self.members]

    def shard_members(self, shard_index: int) -> tuple[str, ...]:
        if not 1 <= shard_index <= self.num_shards:
            raise ValueError(f"shard_index {shard_index} outside [1..{self.num_shards}]")
        return self.members[shard_index - 1]

    def digest(self) -> str:
        header = f"{self.seed}:{self.num_shards}:{self.doc_order_digest}"
        return hashlib.sha256(header.encode("utf-8")).hexdigest()

    def save_manifest(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        manifest = {
            "seed": self.seed,
            "num_shards": self.num_shards,
            "shard_sizes": self.shard_sizes,
            "doc_order_digest": self.doc_order_digest,
            "plan_digest": self.digest(),
        }
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_manifest(cls, path: str | Path, corpus: "CorpusStore") -> "ShardPlan":
        """Recompute the plan recorded in a manifest against a corpus.

        The manifest stores only (seed, N, digest); the assignment is
        re-derived from the seed and verified against the stored sizes
        and doc-order digest.
        """
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
        plan = partition(corpus, manifest["num_shards"], manifest["seed"])
        if plan.doc_order_digest != manifest["doc_order_digest"]:
            raise IntegrityError(
                f"corpus does not match plan manifest {path}: doc ordering digest differs"
            )
        if plan.shard_sizes != manifest["shard_sizes"]:
            raise IntegrityError(f"recomputed shard sizes differ from manifest {path}")
        return plan


def _doc_order_digest(sorted_ids: Sequence[str]) -> str:
    h = hashlib.sha256()
    for doc_id in sorted_ids:
        h.update(doc_id.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def partition(corpus: CorpusStore | Iterable[str], num_shards: int, seed: int) -> ShardPlan:
    """Partition a corpus into ``num_shards`` balanced shards.

    The sorted doc_id list is shuffled with a seeded PCG64 generator and
    cut into contiguous blocks; the first (|corpus| mod N) blocks take
    the ceiling size, the rest the floor.
    """
    if num_shards < 1:
        raise ValueError(f"num_shards must be >= 1, got {num_shards}")
    if isinstance(corpus, CorpusStore):
        sorted_ids = corpus.doc_ids()
    else:
        sorted_ids = sorted(corpus)
    total = len(sorted_ids)
    if total == 0:
        raise ValueError("cannot partition an empty corpus")
    if num_shards > total:
        raise ValueError(
            f"num_shards {num_shards} exceeds corpus size {total}: some shard would be empty"
        )

    rng = np.random.Generator(np.random.PCG64(seed & _SEED_MASK))
    order = rng.permutation(total)

    base, extra = divmod(total, num_shards)
    members: list[tuple[str, ...]] = []
    assignment: dict[str, int] = {}
    cursor = 0
    for shard_index in range(1, num_shards + 1):
        size = base + 1 if shard_index <= extra else base
        block = tuple(sorted_ids[i] for i in order[cursor : cursor + size])
        cursor += size
        members.append(block)
        for doc_id in block:
            assignment[doc_id] = shard_index

    return ShardPlan(
        seed=seed,
        num_shards=num_shards,
        members=tuple(members),
        doc_order_digest=_doc_order_digest(sorted_ids),
        assignment=assignment,
    )


@dataclass(frozen=True)
class ActiveScale:
    """A corpus scale: n active shards in forward or reversed order.

    n = 0 is the closed-book case and resolves to no shards at all.
    """

    n: int
    order: ShardOrder = "forward"

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"scale n must be >= 0, got {self.n}")
        if self.order not in ("forward", "reversed"):
            raise ValueError(f"order must be 'forward' or 'reversed', got {self.order!r}")


def active_shards(plan: ShardPlan, scale: ActiveScale) -> list[int]:
    """Resolve a scale to its ordered list of active shard indices."""
    if scale.n > plan.num_shards:
        raise ValueError(f"scale n={scale.n} exceeds num_shards={plan.num_shards}")
    if scale.order == "forward":
        return list(range(1, scale.n + 1))
    return list(range(plan.num_shards - scale.n + 1, plan.num_shards + 1))
