"""Shared synthetic corpus builders for the test suite."""

from __future__ import annotations

import random
from dataclasses import dataclass

import pytest

from ragscale.corpus import CorpusStore, QAItem, ingest_corpus


def word_soup_corpus(
    n_docs: int,
    seed: int,
    vocab_size: int = 500,
    min_tokens: int = 30,
    max_tokens: int = 60,
    duplicate_groups: int = 0,
) -> CorpusStore:
    """Random-token documents; optionally plant groups of docs sharing
    identical text so exact score ties exist."""
    rng = random.Random(seed)
    vocab = [f"w{i:04d}" for i in range(vocab_size)]
    records = []
    for i in range(n_docs):
        tokens = rng.choices(vocab, k=rng.randint(min_tokens, max_tokens))
        records.append({"doc_id": f"doc{i:05d}", "text": " ".join(tokens)})
    for g in range(duplicate_groups):
        # overwrite a few docs with a shared text (distinct doc_ids)
        shared = " ".join(rng.choices(vocab, k=40))
        for member in range(3):
            records[(g * 3 + member) % n_docs]["text"] = shared
    return ingest_corpus(records)


def word_soup_queries(n_queries: int, seed: int, vocab_size: int = 500) -> list[QAItem]:
    rng = random.Random(seed)
    vocab = [f"w{i:04d}" for i in range(vocab_size)]
    return [
        QAItem(
            query_id=f"q{i:03d}",
            question=" ".join(rng.choices(vocab, k=rng.randint(4, 9))),
            gold_answers=("unused",),
        )
        for i in range(n_queries)
    ]


@dataclass
class PlantedCorpus:
    corpus: CorpusStore
    qa_items: list[QAItem]
    answer_docs: dict[str, list[str]]  # query_id -> doc_ids carrying the answer


def planted_corpus(
    n_docs: int = 500,
    n_queries: int = 100,
    answers_per_query: int = 3,
    seed: int = 7,
) -> PlantedCorpus:
    """Corpus where each query has rare marker tokens shared only with its
    answer-bearing documents, so those documents dominate retrieval for
    that query once their shard is active."""
    rng = random.Random(seed)
    common = [f"c{i:03d}" for i in range(200)]
    records = []
    qa_items: list[QAItem] = []
    answer_docs: dict[str, list[str]] = {}
    doc_counter = 0

    for q in range(n_queries):
        markers = [f"qkey{q:03d}{suffix}" for suffix in "abc"]
        answer = f"ans{q:03d}token"
        qa_items.append(
            QAItem(
                query_id=f"q{q:03d}",
                question=" ".join(markers),
                gold_answers=(answer,),
            )
        )
        owned = []
        for _ in range(answers_per_query):
            filler = rng.choices(common, k=rng.randint(15, 25))
            body = markers + [answer] + filler
            rng.shuffle(body)
            doc_id = f"doc{doc_counter:05d}"
            doc_counter += 1
            records.append({"doc_id": doc_id, "text": " ".join(body)})
            owned.append(doc_id)
        answer_docs[f"q{q:03d}"] = owned

    while doc_counter < n_docs:
        records.append(
            {
                "doc_id": f"doc{doc_counter:05d}",
                "text": " ".join(rng.choices(common, k=rng.randint(20, 40))),
            }
        )
        doc_counter += 1

    return PlantedCorpus(corpus=ingest_corpus(records), qa_items=qa_items, answer_docs=answer_docs)


@pytest.fixture(scope="session")
def small_planted() -> PlantedCorpus:
    return planted_corpus(n_docs=120, n_queries=20, answers_per_query=2, seed=11)

