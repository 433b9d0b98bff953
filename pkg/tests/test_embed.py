import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragscale.embed import HashingEmbedder, RemoteEmbedder, embed_query, embed_texts
from ragscale.errors import IntegrityError, TransportError

words = st.lists(
    st.text(alphabet="abcdefghij", min_size=1, max_size=8), min_size=1, max_size=20
).map(" ".join)


def test_same_text_same_vector():
    emb = HashingEmbedder(dims=32)
    out = embed_texts(emb, ["the same text", "the same text"])
    assert np.array_equal(out[0], out[1])


def test_unit_norm_at_dims_64():
    emb = HashingEmbedder(dims=64)
    vec = embed_texts(emb, ["sprite"])[0]
    assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(text=words, dims=st.sampled_from([8, 64, 256]))
def test_hashing_embedder_properties(text, dims):
    emb = HashingEmbedder(dims=dims)
    vec = embed_texts(emb, [text])[0]
    assert vec.shape == (dims,)
    assert np.all(np.isfinite(vec))
    assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6
    again = embed_texts(emb, [text])[0]
    assert np.array_equal(vec, again)
    # cosine with itself is 1
    assert float(vec @ again) == pytest.approx(1.0, abs=1e-6)


def test_seed_changes_vectors():
    a = HashingEmbedder(dims=32, seed=0).embed(["hello world"])
    b = HashingEmbedder(dims=32, seed=1).embed(["hello world"])
    assert not np.array_equal(a, b)


def test_empty_text_names_index():
    emb = HashingEmbedder(dims=16)
    with pytest.raises(ValueError, match="index 1"):
        embed_texts(emb, ["fine", "   ", "also fine"])
    with pytest.raises(ValueError):
        embed_texts(emb, [])


def test_query_prefix_applied():
    emb = HashingEmbedder(dims=32, query_prefix="query: ")
    direct = emb.embed(["query: what soda"])[0]
    assert np.array_equal(embed_query(emb, "what soda"), direct)


def _vector_service(dims: int, fail_first: int = 0, status: int = 503):
    """MockTransport returning constant vectors; first `fail_first` calls fail."""
    calls = {"count": 0, "batches": []}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["count"] += 1
        body = json.loads(request.content)
        calls["batches"].append(len(body["input"]))
        if calls["count"] <= fail_first:
            return httpx.Response(status)
        data = [{"embedding": [float(i + 1)] * dims} for i in range(len(body["input"]))]
        return httpx.Response(200, json={"data": data})

    return httpx.MockTransport(handler), calls


def test_remote_embedder_batches_requests():
    transport, calls = _vector_service(dims=4)
    emb = RemoteEmbedder(
        endpoint="http://svc/embeddings", model="m", batch_size=64,
        backoff_base=0.0, transport=transport,
    )
    out = emb.embed([f"text {i}" for i in range(150)])
    assert out.shape == (150, 4)
    assert calls["batches"] == [64, 64, 22]


def test_remote_embedder_retries_then_succeeds():
    transport, calls = _vector_service(dims=3, fail_first=2)
    emb = RemoteEmbedder(
        endpoint="http://svc/embeddings", backoff_base=0.0, transport=transport
    )
    out = emb.embed(["a", "b"])
    assert out.shape == (2, 3)
    assert calls["count"] == 3


def test_remote_embedder_reports_attempts_on_exhaustion():
    transport, _ = _vector_service(dims=3, fail_first=99)
    emb = RemoteEmbedder(
        endpoint="http://svc/embeddings", max_retries=3, backoff_base=0.0, transport=transport
    )
    with pytest.raises(TransportError) as excinfo:
        emb.embed(["a"])
    assert excinfo.value.attempts == 4


def test_remote_embedder_dim_mismatch_is_integrity_error():
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        data = [{"embedding": [1.0] * (2 + i)} for i in range(len(body["input"]))]
        return httpx.Response(200, json={"data": data})

    emb = RemoteEmbedder(
        endpoint="http://svc/embeddings", transport=httpx.MockTransport(handler)
    )
    with pytest.raises(IntegrityError):
        emb.embed(["a", "b"])
