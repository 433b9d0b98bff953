#!/usr/bin/env python3
"""End-to-end demo on a synthetic planted-answer corpus.

Builds a corpus whose queries have known answer-bearing documents,
shards it, runs the full (scale, model) grid with the oracle generator,
and prints the coverage/CB analysis. Everything lands under --workdir so
the run can be inspected or re-analyzed afterwards:

    python scripts/synthetic_demo.py --workdir /tmp/ragscale-demo
    ragscale --config /tmp/ragscale-demo/exp.cfg --run-dir /tmp/ragscale-demo/run analyze
"""

import argparse
import random
import sys
from pathlib import Path

from ragscale.config import ExperimentConfig
from ragscale.corpus import ingest_corpus, partition, save_qa, QAItem
from ragscale.embed import HashingEmbedder
from ragscale.experiment import ExecutionLimits, analyze_run, execute, plan_run, report
from ragscale.generate import GeneratorSpec, OracleGenerator
from ragscale.index import build_index
from ragscale.retrieve import RetrievalParams


def build_planted_corpus(n_docs, n_queries, answers_per_query, seed):
    rng = random.Random(seed)
    common = [f"c{i:03d}" for i in range(200)]
    records, qa_items = [], []
    doc_counter = 0
    for q in range(n_queries):
        markers = [f"qkey{q:03d}{s}" for s in "abc"]
        answer = f"ans{q:03d}token"
        qa_items.append(
            QAItem(query_id=f"q{q:03d}", question=" ".join(markers), gold_answers=(answer,))
        )
        for _ in range(answers_per_query):
            body = markers + [answer] + rng.choices(common, k=rng.randint(15, 25))
            rng.shuffle(body)
            records.append({"doc_id": f"doc{doc_counter:05d}", "text": " ".join(body)})
            doc_counter += 1
    while doc_counter < n_docs:
        records.append(
            {"doc_id": f"doc{doc_counter:05d}", "text": " ".join(rng.choices(common, k=30))}
        )
        doc_counter += 1
    return ingest_corpus(records), qa_items


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", type=Path, default=Path("demo-workspace"))
    parser.add_argument("--docs", type=int, default=500)
    parser.add_argument("--queries", type=int, default=100)
    parser.add_argument("--shards", type=int, default=12)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--dims", type=int, default=64)
    args = parser.parse_args()

    workdir = args.workdir
    run_dir = workdir / "run"
    workdir.mkdir(parents=True, exist_ok=True)

    corpus, qa_items = build_planted_corpus(args.docs, args.queries, 3, args.seed)
    corpus.save(run_dir / "corpus.jsonl")
    save_qa(qa_items, workdir / "qa.jsonl")
    print(f"built corpus: {len(corpus)} docs, {len(qa_items)} queries")

    plan = partition(corpus, args.shards, args.seed)
    plan.save_manifest(run_dir / "plan.json")
    embedder = HashingEmbedder(dims=args.dims)
    index_root = run_dir / "indices"
    indices = {
        i: build_index(plan, i, corpus, embedder, index_root=index_root)
        for i in range(1, args.shards + 1)
    }
    print(f"built {len(indices)} exact shard indices (sizes {plan.shard_sizes})")

    scales = list(range(0, args.shards + 1))
    manifest = plan_run(
        run_dir,
        dataset="synthetic-planted",
        corpus=corpus,
        qa_items=qa_items,
        shard_plan=plan,
        scales=scales,
        order="forward",
        models=[GeneratorSpec(model_id="oracle", kind="oracle")],
        retrieval=RetrievalParams(),
        embedder_info={"kind": "hashing", "dims": args.dims, "seed": 0},
        index_root=index_root,
    )
    records = execute(
        run_dir,
        manifest,
        corpus=corpus,
        shard_plan=plan,
        indices=indices,
        embedder=embedder,
        qa_items=qa_items,
        generators={"oracle": OracleGenerator()},
        limits=ExecutionLimits(),
    )
    print(f"executed run {manifest.run_id}: {len(records)} records")

    analysis = analyze_run(run_dir, qa_items)
    series = analysis.cb_series["oracle"]
    print("\n n   CB@n    coverage@n  ratio")
    for n in scales:
        ratio = series.ratio[n]
        shown = f"{ratio:.3f}" if ratio is not None else "  -  "
        print(f"{n:2d}   {series.cb[n]:.3f}   {series.coverage[n]:.3f}       {shown}")

    out = report(analysis, workdir / "analysis")
    print(f"\nwrote {len(out)} report files under {workdir / 'analysis'}")

    config = ExperimentConfig(
        dataset="synthetic-planted",
        corpus_path=str(run_dir / "corpus.jsonl"),
        qa_path=str(workdir / "qa.jsonl"),
        seed=args.seed,
        num_shards=args.shards,
        scales=scales,
        dims=args.dims,
    )
    cfg_lines = [
        f"dataset = {config.dataset}",
        f"corpus_path = {config.corpus_path}",
        f"qa_path = {config.qa_path}",
        f"seed = {config.seed}",
        f"num_shards = {config.num_shards}",
        f"scales = 0..{args.shards}",
        f"dims = {config.dims}",
        "models = oracle:oracle",
    ]
    (workdir / "exp.cfg").write_text("\n".join(cfg_lines) + "\n")
    print(f"config for the ragscale CLI: {workdir / 'exp.cfg'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
