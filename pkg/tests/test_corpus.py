import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragscale.corpus import (
    ActiveScale,
    CorpusStore,
    ShardPlan,
    active_shards,
    ingest_corpus,
    load_qa,
    partition,
    save_qa,
    QAItem,
)
from ragscale.errors import ConflictError, IngestError, IntegrityError, ParseError


def test_ingest_counts_three_records():
    store = ingest_corpus(
        [{"doc_id": f"d{i}", "text": f"text {i}"} for i in range(3)]
    )
    assert len(store) == 3


def test_ingest_missing_text_names_ordinal():
    records = [{"doc_id": "d0", "text": "ok"}, {"doc_id": "d1"}]
    with pytest.raises(IngestError, match="record 2"):
        ingest_corpus(records)


def test_ingest_duplicate_doc_id_conflicts():
    records = [{"doc_id": "dup", "text": "a"}, {"doc_id": "dup", "text": "b"}]
    with pytest.raises(ConflictError, match="dup"):
        ingest_corpus(records)


def test_ingest_ten_thousand_and_reingest_conflict():
    records = [{"doc_id": f"d{i:05d}", "text": f"body {i}"} for i in range(10_000)]
    store = ingest_corpus(records)
    assert len(store) == 10_000
    with pytest.raises(ConflictError):
        store.add(store.get("d00000"))


def test_store_roundtrip(tmp_path):
    store = ingest_corpus(
        [{"doc_id": "a", "text": "alpha", "metadata": {"lang": "en"}}, {"doc_id": "b", "text": "beta"}]
    )
    path = tmp_path / "corpus.jsonl"
    store.save(path)
    loaded = CorpusStore.load(path)
    assert loaded.digest() == store.digest()
    assert loaded.get("a").metadata == {"lang": "en"}


def test_partition_single_shard_holds_everything():
    store = ingest_corpus([{"doc_id": f"d{i}", "text": "x"} for i in range(7)])
    plan = partition(store, 1, seed=0)
    assert plan.shard_sizes == [7]
    assert set(plan.shard_members(1)) == set(store.doc_ids())


def test_partition_ten_docs_three_shards():
    store = ingest_corpus([{"doc_id": f"d{i}", "text": "x"} for i in range(10)])
    plan = partition(store, 3, seed=42)
    assert plan.shard_sizes == [4, 3, 3]
    # set properties by brute force over the assignment
    union = set()
    for shard_index in (1, 2, 3):
        members = set(plan.shard_members(shard_index))
        assert not union & members
        union |= members
    assert union == set(store.doc_ids())


def test_partition_is_deterministic():
    ids = [f"d{i}" for i in range(100)]
    a = partition(ids, 8, seed=123)
    b = partition(ids, 8, seed=123)
    assert a.members == b.members
    assert partition(ids, 8, seed=124).members != a.members


def test_partition_rejects_bad_shard_counts():
    store = ingest_corpus([{"doc_id": "d0", "text": "x"}])
    with pytest.raises(ValueError):
        partition(store, 0, seed=1)
    with pytest.raises(ValueError):
        partition(store, 2, seed=1)


@settings(max_examples=30, deadline=None)
@given(
    size=st.integers(min_value=1, max_value=400),
    num_shards=st.integers(min_value=1, max_value=32),
    seed=st.integers(min_value=0, max_value=2**63 - 1),
)
def test_partition_properties(size, num_shards, seed):
    if num_shards > size:
        num_shards = size
    ids = [f"d{i:04d}" for i in range(size)]
    plan = partition(ids, num_shards, seed)
    sizes = plan.shard_sizes
    assert max(sizes) - min(sizes) <= 1
    everything = [doc for shard in plan.members for doc in shard]
    assert len(everything) == size
    assert set(everything) == set(ids)
    assert partition(ids, num_shards, seed).members == plan.members


def test_active_shards_forward_and_reversed():
    ids = [f"d{i}" for i in range(24)]
    plan = partition(ids, 12, seed=1)
    assert active_shards(plan, ActiveScale(2, "forward")) == [1, 2]
    assert active_shards(plan, ActiveScale(2, "reversed")) == [11, 12]
    assert active_shards(plan, ActiveScale(12, "forward")) == active_shards(
        plan, ActiveScale(12, "reversed")
    )
    assert active_shards(plan, ActiveScale(0, "forward")) == []


def test_active_shards_prefix_monotone():
    ids = [f"d{i}" for i in range(24)]
    plan = partition(ids, 12, seed=1)
    for order in ("forward", "reversed"):
        previous: set[int] = set()
        for n in range(0, 13):
            current = set(active_shards(plan, ActiveScale(n, order)))
            assert previous <= current
            previous = current


def test_active_shards_rejects_out_of_range():
    plan = partition([f"d{i}" for i in range(5)], 5, seed=0)
    with pytest.raises(ValueError):
        active_shards(plan, ActiveScale(6, "forward"))


def test_plan_manifest_roundtrip(tmp_path):
    store = ingest_corpus([{"doc_id": f"d{i}", "text": "x"} for i in range(20)])
    plan = partition(store, 4, seed=9)
    path = tmp_path / "plan.json"
    plan.save_manifest(path)
    reloaded = ShardPlan.from_manifest(path, store)
    assert reloaded.members == plan.members
    assert reloaded.digest() == plan.digest()


def test_plan_manifest_rejects_wrong_corpus(tmp_path):
    store = ingest_corpus([{"doc_id": f"d{i}", "text": "x"} for i in range(20)])
    plan = partition(store, 4, seed=9)
    path = tmp_path / "plan.json"
    plan.save_manifest(path)
    other = ingest_corpus([{"doc_id": f"e{i}", "text": "x"} for i in range(20)])
    with pytest.raises(IntegrityError):
        ShardPlan.from_manifest(path, other)


def test_load_qa_preserves_order_and_aliases(tmp_path):
    path = tmp_path / "qa.jsonl"
    items = [
        {"query_id": "q1", "question": "what soda?", "gold_answers": ["Sprite", "sprite soda"]},
        {"query_id": "q2", "question": "who?", "gold_answers": ["someone"]},
    ]
    path.write_text("\n".join(json.dumps(item) for item in items) + "\n")
    loaded = load_qa(path)
    assert [item.query_id for item in loaded] == ["q1", "q2"]
    assert loaded[0].gold_answers == ("Sprite", "sprite soda")


def test_load_qa_rejects_empty_answers_and_duplicates(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"query_id": "q1", "question": "?", "gold_answers": []}) + "\n")
    with pytest.raises(ParseError):
        load_qa(path)
    path.write_text(
        json.dumps({"query_id": "q1", "question": "?", "gold_answers": ["a"]})
        + "\n"
        + json.dumps({"query_id": "q1", "question": "?", "gold_answers": ["b"]})
        + "\n"
    )
    with pytest.raises(ConflictError):
        load_qa(path)


def test_load_qa_large_file(tmp_path):
    path = tmp_path / "nq.jsonl"
    items = [
        QAItem(query_id=f"q{i}", question=f"question {i}", gold_answers=(f"answer {i}",))
        for i in range(1769)
    ]
    save_qa(items, path)
    assert len(load_qa(path)) == 1769
