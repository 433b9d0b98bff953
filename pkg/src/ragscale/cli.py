"""Command-line entry point.

Subcommands mirror the pipeline stages: ingest -> shard -> index -> run
-> analyze/report, plus a single-query retrieve for debugging and a
fixtures command for analysis-only runs over bundled or external score
grids. Remote service endpoints and tokens come from environment
variables (RAGSCALE_EMBED_* / RAGSCALE_GEN_*).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import fixtures as fixture_mod
from .config import ExperimentConfig, load_config
from .corpus import ActiveScale, CorpusStore, ShardPlan, load_qa, partition
from .embed import Embedder, HashingEmbedder, RemoteEmbedder
from .errors import MissingArtifactError, RagScaleError
from .experiment import (
    ExecutionLimits,
    analyze_grids,
    analyze_run,
    execute,
    plan_run,
    report,
)
from .generate import make_generator
from .index import build_index, load_shard_indices
from .retrieve import Retriever

CORPUS_FILE = "corpus.jsonl"
PLAN_FILE = "plan.json"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragscale",
        description="Corpus-scaling experimentation harness for retrieval-augmented generation",
    )
    parser.add_argument("--config", type=Path, help="key = value experiment config file")
    parser.add_argument("--run-dir", type=Path, default=Path("run"), help="run working directory")
    parser.add_argument("--seed", type=int, help="override the partition seed")
    parser.add_argument("--search-concurrency", type=int, help="shard fan-out worker bound")
    parser.add_argument("--embed-concurrency", type=int, help="embedding in-flight bound")
    parser.add_argument("--generate-concurrency", type=int, help="generator in-flight bound")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", help="validate the raw corpus and persist the document store")
    sub.add_parser("shard", help="compute the balanced random partition and save its manifest")
    sub.add_parser("index", help="build one vector index per shard")

    p = sub.add_parser("retrieve", help="debug a single query at one corpus scale")
    p.add_argument("--query-id", help="query_id from the QA file")
    p.add_argument("--question", help="ad-hoc question text")
    p.add_argument("-n", type=int, default=1, help="corpus scale (number of active shards)")

    sub.add_parser("run", help="plan and execute the full (scale, model) grid")
    sub.add_parser("analyze", help="recompute grids, catch-up and CB series from the run")

    p = sub.add_parser("report", help="emit tables, plot data and a summary")
    p.add_argument("--out", type=Path, help="output directory (default <run-dir>/analysis)")

    p = sub.add_parser("fixtures", help="catch-up analysis over score-grid fixture files")
    p.add_argument("--dataset", default="all", help="bundled dataset name or 'all'")
    p.add_argument("--files", nargs="*", type=Path, help="external fixture CSVs instead")
    p.add_argument("--out", type=Path, help="write per-dataset report files here")
    return parser


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    for name in ("search_concurrency", "embed_concurrency", "generate_concurrency"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def _corpus(args) -> CorpusStore:
    path = args.run_dir / CORPUS_FILE
    if not path.exists():
        raise MissingArtifactError(f"no ingested corpus at {path}; run 'ragscale ingest' first")
    return CorpusStore.load(path)


def _plan(args, corpus: CorpusStore) -> ShardPlan:
    path = args.run_dir / PLAN_FILE
    if not path.exists():
        raise MissingArtifactError(f"no shard plan at {path}; run 'ragscale shard' first")
    return ShardPlan.from_manifest(path, corpus)


def _embedder(cfg: ExperimentConfig) -> Embedder:
    if cfg.embedder == "hashing":
        return HashingEmbedder(dims=cfg.dims, seed=cfg.embed_seed)
    return RemoteEmbedder(dims=cfg.dims or None, max_in_flight=cfg.embed_concurrency)


def _cmd_ingest(args, cfg: ExperimentConfig) -> int:
    if not cfg.corpus_path:
        raise MissingArtifactError("config has no corpus_path")
    store = CorpusStore.load(cfg.corpus_path)
    store.save(args.run_dir / CORPUS_FILE)
    print(f"ingested {len(store)} documents -> {args.run_dir / CORPUS_FILE}")
    return 0


def _cmd_shard(args, cfg: ExperimentConfig) -> int:
    corpus = _corpus(args)
    plan = partition(corpus, cfg.num_shards, cfg.seed)
    plan.save_manifest(args.run_dir / PLAN_FILE)
    print(
        f"partitioned {len(corpus)} documents into {plan.num_shards} shards "
        f"(sizes {min(plan.shard_sizes)}..{max(plan.shard_sizes)}, seed {plan.seed})"
    )
    return 0


def _cmd_index(args, cfg: ExperimentConfig) -> int:
    corpus = _corpus(args)
    plan = _plan(args, corpus)
    embedder = _embedder(cfg)
    index_root = args.run_dir / cfg.index_root
    for shard_index in range(1, plan.num_shards + 1):
        index = build_index(
            plan, shard_index, corpus, embedder, kind=cfg.index_kind, index_root=index_root
        )
        print(f"shard {shard_index}: {len(index)} vectors ({cfg.index_kind}, dims {index.dims})")
    return 0


def _cmd_retrieve(args, cfg: ExperimentConfig) -> int:
    from .corpus import QAItem

    corpus = _corpus(args)
    plan = _plan(args, corpus)
    if args.query_id:
        qa_items = {item.query_id: item for item in load_qa(cfg.qa_path)}
        if args.query_id not in qa_items:
            raise MissingArtifactError(f"query_id {args.query_id!r} not in {cfg.qa_path}")
        qa = qa_items[args.query_id]
    elif args.question:
        qa = QAItem(query_id="adhoc", question=args.question, gold_answers=("?",))
    else:
        print("retrieve needs --query-id or --question", file=sys.stderr)
        return 2
    scale = ActiveScale(args.n, cfg.order)  # type: ignore[arg-type]
    shards = range(1, plan.num_shards + 1)
    indices = load_shard_indices(args.run_dir / cfg.index_root, plan, list(shards), cfg.index_kind)
    retriever = Retriever(plan, indices, corpus, _embedder(cfg), cfg.retrieval_params())
    bundle = retriever.evidence(qa, scale)
    print(f"query {qa.query_id!r} at n={scale.n} ({scale.order}): {len(bundle.chunks)} chunks")
    print(bundle.rendered_context, end="")
    return 0


def _cmd_run(args, cfg: ExperimentConfig) -> int:
    corpus = _corpus(args)
    plan = _plan(args, corpus)
    qa_items = load_qa(cfg.qa_path)
    embedder = _embedder(cfg)
    index_root = args.run_dir / cfg.index_root
    specs = cfg.generator_specs()
    manifest = plan_run(
        args.run_dir,
        dataset=cfg.dataset,
        corpus=corpus,
        qa_items=qa_items,
        shard_plan=plan,
        scales=cfg.scales,
        order=cfg.order,
        models=specs,
        retrieval=cfg.retrieval_params(),
        embedder_info={"kind": cfg.embedder, "dims": cfg.dims, "seed": cfg.embed_seed},
        index_root=index_root,
        run_id=cfg.run_id,
        sample_seed=cfg.sample_seed,
    )
    max_n = max(cfg.scales)
    shards = range(1, plan.num_shards + 1) if max_n else []
    indices = load_shard_indices(index_root, plan, list(shards), cfg.index_kind)
    generators = {spec.model_id: make_generator(spec) for spec in specs}
    records = execute(
        args.run_dir,
        manifest,
        corpus=corpus,
        shard_plan=plan,
        indices=indices,
        embedder=embedder,
        qa_items=qa_items,
        generators=generators,
        limits=ExecutionLimits(
            cfg.search_concurrency, cfg.embed_concurrency, cfg.generate_concurrency
        ),
    )
    print(
        f"run {manifest.run_id}: {len(records)} records "
        f"({len(manifest.grid_cells())} cells x {len(qa_items)} queries)"
    )
    return 0


def _cmd_analyze(args, cfg: ExperimentConfig) -> int:
    qa_items = load_qa(cfg.qa_path)
    analysis = analyze_run(args.run_dir, qa_items)
    for (small, large), n_star in analysis.catchup.items():
        shown = "no catch-up" if n_star is None else str(n_star)
        print(f"catch-up {small} -> {large}: {shown}")
    for model, series in analysis.cb_series.items():
        top = max(series.scales())
        print(
            f"{model}: known {series.known:.3f}, CB@{top} {series.cb[top]:.3f}, "
            f"coverage@{top} {series.coverage[top]:.3f}"
        )
    return 0


def _cmd_report(args, cfg: ExperimentConfig) -> int:
    qa_items = load_qa(cfg.qa_path)
    analysis = analyze_run(args.run_dir, qa_items)
    out_dir = args.out or (args.run_dir / "analysis")
    for path in report(analysis, out_dir):
        print(f"wrote {path}")
    return 0


def _cmd_fixtures(args, cfg: ExperimentConfig) -> int:
    if args.files:
        grid_sets = [(path.stem, fixture_mod.load_grid_file(path)) for path in args.files]
    else:
        names = fixture_mod.BUNDLED_DATASETS if args.dataset == "all" else (args.dataset,)
        grid_sets = []
        for name in names:
            f1_grid, em_grid = fixture_mod.load_bundled(name)
            grid_sets.append((name, {(name, "F1"): f1_grid, (name, "EM"): em_grid}))
    for _, grids in grid_sets:
        datasets = sorted({dataset for dataset, _ in grids})
        for dataset in datasets:
            analysis = analyze_grids(
                grids[(dataset, "F1")],
                grids[(dataset, "EM")],
                model_order=fixture_mod.MODEL_LADDER,
                dataset=dataset,
            )
            for (small, large), n_star in analysis.catchup.items():
                shown = "no catch-up" if n_star is None else str(n_star)
                print(f"{dataset}: {small} -> {large}: {shown}")
            if args.out:
                for path in report(analysis, Path(args.out) / dataset):
                    print(f"wrote {path}")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "shard": _cmd_shard,
    "index": _cmd_index,
    "retrieve": _cmd_retrieve,
    "run": _cmd_run,
    "analyze": _cmd_analyze,
    "report": _cmd_report,
    "fixtures": _cmd_fixtures,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    cfg = _load_cfg(args)
    try:
        return _COMMANDS[args.command](args, cfg)
    except RagScaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
