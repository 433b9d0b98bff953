import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import word_soup_corpus, word_soup_queries

from ragscale.corpus import ActiveScale, Document, QAItem, ingest_corpus, partition
from ragscale.embed import HashingEmbedder, embed_passages, embed_query
from ragscale.errors import ConfigError, MissingArtifactError
from ragscale.index import build_index, search
from ragscale.retrieve import (
    RetrievalParams,
    Retriever,
    assemble_evidence,
    chunk_documents,
    empty_bundle,
    rerank,
    retrieve_topk,
)


def qa(question="what is it", qid="q0"):
    return QAItem(query_id=qid, question=question, gold_answers=("x",))


def numbered_doc(doc_id: str, n_tokens: int) -> Document:
    text = " ".join(f"t{i}" for i in range(n_tokens)) if n_tokens else " "
    return Document(doc_id=doc_id, text=text)


def enumerate_spans(n_tokens: int, size: int, overlap: int) -> list[tuple[int, int]]:
    """Brute enumeration oracle: every multiple of the stride that starts a
    window, stopping with the first window that reaches the end."""
    if n_tokens == 0:
        return []
    stride = size - overlap
    spans = []
    for start in range(0, n_tokens, stride):
        end = min(start + size, n_tokens)
        spans.append((start, end))
        if end == n_tokens and start + size >= n_tokens:
            break
    return spans


def test_chunk_600_tokens_matches_worked_example():
    chunks = chunk_documents([numbered_doc("d", 600)], 256, 64)
    assert [c.token_span for c in chunks] == [(0, 256), (192, 448), (384, 600)]
    assert [c.token_span for c in chunks] == enumerate_spans(600, 256, 64)
    assert chunks[0].chunk_id == "d:0"
    assert chunks[2].text.split()[0] == "t384"


def test_chunk_short_doc_single_window():
    chunks = chunk_documents([numbered_doc("d", 100)], 256, 64)
    assert [c.token_span for c in chunks] == [(0, 100)]


def test_chunk_rejects_overlap_not_below_size():
    with pytest.raises(ConfigError):
        chunk_documents([numbered_doc("d", 10)], 256, 256)
    with pytest.raises(ConfigError):
        chunk_documents([numbered_doc("d", 10)], 256, -1)


def test_chunk_blank_doc_yields_nothing():
    assert chunk_documents([Document(doc_id="d", text=" ")], 256, 64) == []


def test_chunk_order_follows_doc_order():
    docs = [numbered_doc("b", 300), numbered_doc("a", 300)]
    chunks = chunk_documents(docs, 256, 64)
    assert [c.doc_id for c in chunks] == ["b", "b", "a", "a"]


@settings(max_examples=60, deadline=None)
@given(
    n_tokens=st.integers(min_value=0, max_value=900),
    size=st.integers(min_value=2, max_value=300),
    overlap=st.integers(min_value=0, max_value=299),
)
def test_chunk_properties(n_tokens, size, overlap):
    if overlap >= size:
        overlap = size - 1
    doc = numbered_doc("d", n_tokens)
    chunks = chunk_documents([doc], size, overlap)
    assert [c.token_span for c in chunks] == enumerate_spans(n_tokens, size, overlap)
    tokens = doc.text.split()
    covered = set()
    for c in chunks:
        start, end = c.token_span
        assert 0 <= start < end <= n_tokens
        assert c.text == " ".join(tokens[start:end])
        covered.update(range(start, end))
    if n_tokens:
        assert covered == set(range(n_tokens))
    for prev, nxt in zip(chunks, chunks[1:]):
        assert prev.token_span[1] - nxt.token_span[0] == overlap


class StubEmbedder:
    """Maps exact texts to fixed vectors; for hand-computed cosine cases."""

    unit_norm = False
    query_prefix = ""
    passage_prefix = ""

    def __init__(self, table: dict[str, tuple[float, ...]], dims: int = 2):
        self.table = table
        self.dims = dims

    def embed(self, texts):
        return np.array([self.table[t] for t in texts], dtype=np.float64)


def chunk_like(text, doc_id="d", start=0):
    from ragscale.retrieve import Chunk

    return Chunk(chunk_id=f"{doc_id}:{start}", doc_id=doc_id, text=text,
                 token_span=(start, start + len(text.split())))


def test_rerank_single_chunk_scores_cosine():
    emb = StubEmbedder({"q": (1.0, 0.0), "only": (0.6, 0.8)})
    ranked = rerank(qa("q"), [chunk_like("only")], emb)
    assert ranked[0].rerank_score == pytest.approx(0.6, abs=1e-9)


def test_rerank_hand_computed_order():
    emb = StubEmbedder(
        {"q": (1.0, 0.0), "hi": (0.8, 0.6), "mid": (0.6, 0.8), "lo": (0.0, 1.0)}
    )
    ranked = rerank(qa("q"), [chunk_like("lo"), chunk_like("hi"), chunk_like("mid")], emb)
    # hand cosine vs (1,0): hi=0.8, mid=0.6, lo=0.0
    assert [c.text for c in ranked] == ["hi", "mid", "lo"]
    assert [c.rerank_score for c in ranked] == pytest.approx([0.8, 0.6, 0.0], abs=1e-9)


def test_rerank_tie_breaks_by_doc_id_then_start():
    emb = StubEmbedder({"q": (1.0, 0.0), "same": (1.0, 0.0)})
    ranked = rerank(
        qa("q"),
        [chunk_like("same", doc_id="b"), chunk_like("same", doc_id="a", start=5),
         chunk_like("same", doc_id="a")],
        emb,
    )
    assert [(c.doc_id, c.start) for c in ranked] == [("a", 0), ("a", 5), ("b", 0)]


def test_rerank_requires_chunks():
    with pytest.raises(ValueError):
        rerank(qa(), [], HashingEmbedder(dims=8))


def test_assemble_respects_budget_and_order():
    chunks = [chunk_like(f"c{i}", doc_id=f"d{i}") for i in range(20)]
    bundle = assemble_evidence("q0", ActiveScale(3), chunks, m=8)
    assert len(bundle.chunks) == 8
    assert [c.text for c in bundle.chunks] == [f"c{i}" for i in range(8)]
    small = assemble_evidence("q0", ActiveScale(3), chunks[:3], m=8)
    assert len(small.chunks) == 3


def test_assemble_rendered_context_bit_exact():
    chunks = [chunk_like("first chunk"), chunk_like("second chunk", doc_id="e")]
    bundle = assemble_evidence("q0", ActiveScale(1), chunks, m=8)
    assert bundle.rendered_context == "[1] first chunk\n\n[2] second chunk\n"
    assert empty_bundle("q0", ActiveScale(0)).rendered_context == ""


def test_bundle_roundtrip_and_digest():
    chunks = [chunk_like("first chunk")]
    bundle = assemble_evidence("q0", ActiveScale(1), rerank(
        qa("first"), chunks, HashingEmbedder(dims=8)), m=8)
    from ragscale.retrieve import EvidenceBundle

    again = EvidenceBundle.from_dict(bundle.to_dict())
    assert again == bundle
    assert again.digest() == bundle.digest()


def _shard_setup(n_docs=100, num_shards=2, seed=17, dims=32):
    corpus = word_soup_corpus(n_docs, seed=seed, duplicate_groups=3)
    plan = partition(corpus, num_shards, seed=seed)
    emb = HashingEmbedder(dims=dims)
    indices = {i: build_index(plan, i, corpus, emb) for i in range(1, num_shards + 1)}
    return corpus, plan, emb, indices


def test_retrieve_single_shard_equals_direct_search():
    corpus, plan, emb, indices = _shard_setup()
    query = word_soup_queries(1, seed=5)[0]
    merged = retrieve_topk(plan, ActiveScale(1), indices, query, emb, k=10)
    direct = search(indices[1], embed_query(emb, query.question), 10)
    assert merged == direct


def test_retrieve_merge_equals_brute_force_over_union():
    corpus, plan, emb, indices = _shard_setup()
    from test_index import brute_force_topk

    for query in word_soup_queries(8, seed=23):
        qv = embed_query(emb, query.question)
        active_ids = sorted(plan.shard_members(1) + plan.shard_members(2))
        raw = embed_passages(emb, [corpus.get(d).text for d in active_ids])
        expected = brute_force_topk(active_ids, raw, qv, 10)
        got = [h.doc_id for h in retrieve_topk(plan, ActiveScale(2), indices, query, emb, k=10)]
        assert got == expected


def test_retrieve_tie_prefers_smaller_doc_id():
    records = [
        {"doc_id": "zz", "text": "twin text here"},
        {"doc_id": "aa", "text": "twin text here"},
        {"doc_id": "mm", "text": "something unrelated entirely"},
        {"doc_id": "nn", "text": "other filler words go"},
    ]
    corpus = ingest_corpus(records)
    # force the twins into different shards
    for seed in range(50):
        plan = partition(corpus, 2, seed=seed)
        if plan.assignment["aa"] != plan.assignment["zz"]:
            break
    assert plan.assignment["aa"] != plan.assignment["zz"]
    emb = HashingEmbedder(dims=16)
    indices = {i: build_index(plan, i, corpus, emb) for i in (1, 2)}
    hits = retrieve_topk(plan, ActiveScale(2), indices, qa("twin text here"), emb, k=2)
    assert [h.doc_id for h in hits] == ["aa", "zz"]
    assert hits[0].score == pytest.approx(hits[1].score, abs=0)


def test_retrieve_rejects_closed_book_and_missing_index():
    corpus, plan, emb, indices = _shard_setup()
    query = word_soup_queries(1, seed=5)[0]
    with pytest.raises(ValueError, match="closed-book"):
        retrieve_topk(plan, ActiveScale(0), indices, query, emb)
    del indices[2]
    with pytest.raises(MissingArtifactError, match="shard 2"):
        retrieve_topk(plan, ActiveScale(2), indices, query, emb)


def test_retriever_end_to_end_deterministic():
    corpus, plan, emb, indices = _shard_setup()
    retriever = Retriever(plan, indices, corpus, emb, RetrievalParams(k=5, m=4))
    query = word_soup_queries(1, seed=31)[0]
    one = retriever.evidence(query, ActiveScale(2))
    two = retriever.evidence(query, ActiveScale(2))
    assert one == two
    assert one.digest() == two.digest()
    assert len(one.chunks) <= 4
    closed = retriever.evidence(query, ActiveScale(0))
    assert closed.chunks == () and closed.rendered_context == ""


def test_retriever_candidate_pool_monotone():
    corpus, plan, emb, indices = _shard_setup(n_docs=120, num_shards=4)
    searchable = set()
    for n in range(1, 5):
        now = set()
        for shard in range(1, n + 1):
            now.update(plan.shard_members(shard))
        assert searchable <= now
        searchable = now
    assert searchable == set(corpus.doc_ids())
