"""Per-shard vector indices: exact flat scan and approximate graph search.

Exact mode is the correctness contract: cosine via dot product over
L2-normalized vectors, ties broken by doc_id ascending. Approximate mode
is a navigable small-world graph (nearest-neighbor edges plus seeded
long-range shortcuts) searched with a best-first beam; it trades exact
ranking for speed and is gated by a measured recall floor, never assumed.

Index files live under an index root, one directory per shard plan,
named by (plan digest, shard index, kind).
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusStore, ShardPlan
from .embed import Embedder, embed_passages
from .errors import IntegrityError, MissingArtifactError

_MAGIC = b"RSIX"
_VERSION = 1

DEFAULT_BUILD_PARAMS = {
    "out_degree": 32,
    "shortcuts": 16,
    "ef_search": 256,
    "entry_points": 8,
    "graph_seed": 13,
}


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float
    shard_index: int


@dataclass
class ShardIndex:
    """Immutable vector index over one shard's documents.

    ``doc_ids`` is sorted ascending and row-aligned with ``matrix``
    (L2-normalized float32). Approximate indices additionally carry the
    graph adjacency, row-aligned with the documents.
    """

    shard_index: int
    kind: str  # "exact" | "approximate"
    dims: int
    doc_ids: tuple[str, ...]
    matrix: np.ndarray  # (count, dims) float64, rows L2-normalized
    build_params: dict = field(default_factory=dict)
    plan_digest: str = ""
    neighbors: np.ndarray | None = None  # (count, out_degree + shortcuts) int32

    def __len__(self) -> int:
        return len(self.doc_ids)


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    # float64 scoring keeps ranking stable for near-tied cosines
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0):
        bad = int(np.argmax(norms == 0))
        raise IntegrityError(f"zero-norm vector at row {bad}: cannot normalize for cosine")
    return matrix / norms[:, None]


def _build_graph(matrix: np.ndarray, params: Mapping[str, int]) -> np.ndarray:
    """Neighbor table: exact top-M cosine neighbors per node plus seeded
    random long-range shortcuts, computed in row blocks."""
    count = matrix.shape[0]
    out_degree = min(int(params["out_degree"]), max(count - 1, 1))
    shortcuts = min(int(params["shortcuts"]), max(count - 1, 1))
    rng = np.random.Generator(np.random.PCG64(int(params["graph_seed"])))

    table = np.zeros((count, out_degree + shortcuts), dtype=np.int32)
    block = max(1, min(1024, (64 << 20) // max(count * 8, 1)))
    for start in range(0, count, block):
        rows = matrix[start : start + block]
        scores = rows @ matrix.T
        for local, row_scores in enumerate(scores):
            node = start + local
            row_scores[node] = -np.inf  # exclude self
            take = min(out_degree, count - 1)
            if take == 0:
                table[node, :out_degree] = node
                continue
            top = np.argpartition(-row_scores, take - 1)[:take]
            top = top[np.argsort(-row_scores[top], kind="stable")]
            table[node, :take] = top
            if take < out_degree:
                table[node, take:out_degree] = top[-1]
    if shortcuts:
        table[:, out_degree:] = rng.integers(0, count, size=(count, shortcuts), dtype=np.int32)
    return table


def build_index(
    plan: ShardPlan,
    shard_index: int,
    corpus: CorpusStore,
    embedder: Embedder,
    kind: str = "exact",
    index_root: str | Path | None = None,
    build_params: Mapping[str, int] | None = None,
) -> ShardIndex:
    """Embed one shard's documents and build (and optionally persist) its
    index. Rebuilding from identical inputs reproduces identical bytes."""
    if kind not in ("exact", "approximate"):
        raise ValueError(f"kind must be 'exact' or 'approximate', got {kind!r}")
    members = plan.shard_members(shard_index)
    doc_ids = tuple(sorted(members))
    texts = [corpus.get(doc_id).text for doc_id in doc_ids]
    matrix = _normalize_rows(embed_passages(embedder, texts))

    params = dict(DEFAULT_BUILD_PARAMS) if kind == "approximate" else {}
    if build_params:
        params.update(build_params)
    neighbors = _build_graph(matrix, params) if kind == "approximate" else None

    index = ShardIndex(
        shard_index=shard_index,
        kind=kind,
        dims=matrix.shape[1],
        doc_ids=doc_ids,
        matrix=matrix,
        build_params=params,
        plan_digest=plan.digest(),
        neighbors=neighbors,
    )
    if index_root is not None:
        path = index_path(index_root, plan, shard_index, kind)
        _check_sibling_dims(path.parent, index.dims)
        save_index(index, path)
    return index


def index_path(index_root: str | Path, plan: ShardPlan, shard_index: int, kind: str) -> Path:
    return Path(index_root) / f"plan-{plan.digest()[:16]}" / f"shard_{shard_index:03d}.{kind}.idx"


def _check_sibling_dims(plan_dir: Path, dims: int) -> None:
    if not plan_dir.exists():
        return
    for sibling in sorted(plan_dir.glob("*.idx")):
        header = _read_header(sibling)
        if header["dims"] != dims:
            raise IntegrityError(
                f"dims {dims} conflicts with existing index {sibling.name} (dims {header['dims']})"
            )


def save_index(index: ShardIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    id_bytes = [doc_id.encode("utf-8") for doc_id in index.doc_ids]
    id_width = max((len(b) for b in id_bytes), default=1)
    header = {
        "kind": index.kind,
        "dims": index.dims,
        "count": len(index.doc_ids),
        "id_width": id_width,
        "dtype": "f8",
        "shard_index": index.shard_index,
        "plan_digest": index.plan_digest,
        "build_params": index.build_params,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes([_VERSION]))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for row, raw in zip(index.matrix, id_bytes):
            fh.write(raw.ljust(id_width, b"\x00"))
            fh.write(row.astype("<f8").tobytes())
        if index.neighbors is not None:
            fh.write(index.neighbors.astype("<i4").tobytes())


def _read_header(path: Path) -> dict:
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise IntegrityError(f"{path}: not an index file (bad magic)")
        version = fh.read(1)[0]
        if version != _VERSION:
            raise IntegrityError(f"{path}: unsupported index version {version}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(header_len).decode("utf-8"))


def load_index(path: str | Path) -> ShardIndex:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"index file {path} does not exist")
    header = _read_header(path)
    offset = 4 + 1 + 4 + len(
        json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    )
    count, dims, id_width = header["count"], header["dims"], header["id_width"]
    record = id_width + dims * 8
    blob = path.read_bytes()[offset:]
    doc_ids = []
    matrix = np.empty((count, dims), dtype=np.float64)
    for i in range(count):
        start = i * record
        doc_ids.append(blob[start : start + id_width].rstrip(b"\x00").decode("utf-8"))
        matrix[i] = np.frombuffer(blob[start + id_width : start + record], dtype="<f8")
    neighbors = None
    if header["kind"] == "approximate":
        width = header["build_params"]["out_degree"] + header["build_params"]["shortcuts"]
        neighbors = np.frombuffer(
            blob[count * record : count * record + count * width * 4], dtype="<i4"
        ).reshape(count, width)
    return ShardIndex(
        shard_index=header["shard_index"],
        kind=header["kind"],
        dims=dims,
        doc_ids=tuple(doc_ids),
        matrix=matrix,
        build_params=header["build_params"],
        plan_digest=header["plan_digest"],
        neighbors=neighbors,
    )


def load_shard_indices(
    index_root: str | Path,
    plan: ShardPlan,
    shard_indices: Sequence[int],
    kind: str = "exact",
) -> dict[int, ShardIndex]:
    indices = {}
    for shard_index in shard_indices:
        path = index_path(index_root, plan, shard_index, kind)
        if not path.exists():
            raise MissingArtifactError(f"no {kind} index for shard {shard_index} at {path}")
        indices[shard_index] = load_index(path)
    return indices


def _prepare_query(index: ShardIndex, query_vector: np.ndarray) -> np.ndarray:
    query = np.asarray(query_vector, dtype=np.float64).reshape(-1)
    if query.shape[0] != index.dims:
        raise ValueError(f"query dims {query.shape[0]} != index dims {index.dims}")
    norm = np.linalg.norm(query)
    if norm == 0:
        raise ValueError("query vector has zero norm")
    return query / norm


def search(index: ShardIndex, query_vector: np.ndarray, k: int) -> list[ScoredDoc]:
    """Top-k by cosine, sorted by (score desc, doc_id asc).

    Exact mode scans every entry; approximate mode runs a beam search
    over the neighbor graph with breadth ``ef_search``. Ranking uses the
    float64 dot product rounded to float32: the rounding absorbs
    summation-order noise, so exact ties order by doc_id no matter which
    shard (or which independent re-computation) scored them.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        return []
    query = _prepare_query(index, query_vector)
    if index.kind == "exact":
        scores = (index.matrix @ query).astype(np.float32)
        top = np.argsort(-scores, kind="stable")[:k]
        rows = top
    else:
        rows, scores = _graph_search(index, query, k)
    return [
        ScoredDoc(doc_id=index.doc_ids[i], score=float(scores[i]), shard_index=index.shard_index)
        for i in rows
    ]


def _graph_search(index: ShardIndex, query: np.ndarray, k: int) -> tuple[list[int], np.ndarray]:
    assert index.neighbors is not None
    count = len(index)
    ef = max(int(index.build_params.get("ef_search", 96)), k)
    n_entries = min(int(index.build_params.get("entry_points", 8)), count)
    entries = sorted({(count * i) // n_entries for i in range(n_entries)})

    scores = (index.matrix @ query).astype(np.float32)
    visited = np.zeros(count, dtype=bool)
    visited[entries] = True
    # candidates: max-heap by score (negated); pool: min-heap keeping the
    # best ef seen, evicting lowest score / highest doc row on ties
    candidates = [(-scores[i], i) for i in entries]
    heapq.heapify(candidates)
    pool = [(scores[i], -i) for i in entries]
    heapq.heapify(pool)
    while len(pool) > ef:
        heapq.heappop(pool)

    while candidates:
        neg_score, node = heapq.heappop(candidates)
        if len(pool) >= ef and -neg_score < pool[0][0]:
            break
        fresh = [nb for nb in index.neighbors[node] if not visited[nb]]
        if not fresh:
            continue
        visited[fresh] = True
        for nb in fresh:
            score = scores[nb]
            if len(pool) < ef or score > pool[0][0] or (score == pool[0][0] and -nb > pool[0][1]):
                heapq.heappush(candidates, (-score, int(nb)))
                heapq.heappush(pool, (score, -int(nb)))
                if len(pool) > ef:
                    heapq.heappop(pool)

    found = sorted(((-score, -neg_row) for score, neg_row in pool))
    rows = [row for _, row in found[:k]]
    return rows, scores
