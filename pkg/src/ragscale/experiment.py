"""Full-factorial (scale, model) experiment runner and analysis pipeline.

A run is planned into an immutable manifest, executed cell by cell with
resumable append-only persistence, and then analyzed offline: score
grids, catch-up thresholds between adjacent model tiers, and per-model
CB/coverage/utilization series. Analysis reads only persisted records
and bundles, never live services.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import ActiveScale, CorpusStore, QAItem, ShardPlan, active_shards, qa_digest
from .embed import Embedder
from .errors import ConfigError, IntegrityError, MissingArtifactError
from .generate import GenerationRecord, Generator, GeneratorSpec, prompt_template_digest
from .index import ShardIndex, index_path
from .metrics import CBSeries, ScoreGrid, build_cb_series, catch_up, coverage_hit, score_grid
from .retrieve import RetrievalParams, Retriever
from .runlog import BundleStore, RecordLog, load_records, truncate_to_sealed

LOG_NAME = "records.log"
MANIFEST_NAME = "manifest.json"
BUNDLE_DIR = "bundles"
LOCK_NAME = "run.lock"


@dataclass(frozen=True)
class ExecutionLimits:
    search_concurrency: int = 8
    embed_concurrency: int = 4
    generate_concurrency: int = 4


@dataclass
class RunManifest:
    run_id: str
    dataset: str
    qa_digest: str
    corpus_digest: str
    plan_seed: int
    num_shards: int
    plan_digest: str
    scales: list[int]
    order: str
    models: list[GeneratorSpec]
    retrieval: RetrievalParams
    embedder_info: dict
    prompt_digest: str
    temperature: float
    max_tokens: int
    sample_seed: int | None = None
    created_at: str = ""

    @property
    def model_ids(self) -> list[str]:
        return [spec.model_id for spec in self.models]

    def grid_cells(self) -> list[tuple[int, str]]:
        return [(n, model_id) for n in self.scales for model_id in self.model_ids]

    def core_dict(self) -> dict:
        data = self.to_dict()
        data.pop("created_at")
        return data

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "dataset": self.dataset,
            "qa_digest": self.qa_digest,
            "corpus_digest": self.corpus_digest,
            "plan_seed": self.plan_seed,
            "num_shards": self.num_shards,
            "plan_digest": self.plan_digest,
            "scales": list(self.scales),
            "order": self.order,
            "models": [
                {
                    "model_id": s.model_id,
                    "kind": s.kind,
                    "endpoint": s.endpoint,
                    "temperature": s.temperature,
                    "max_tokens": s.max_tokens,
                }
                for s in self.models
            ],
            "retrieval": {
                "k": self.retrieval.k,
                "m": self.retrieval.m,
                "chunk_tokens": self.retrieval.chunk_tokens,
                "overlap_tokens": self.retrieval.overlap_tokens,
                "index_kind": self.retrieval.index_kind,
            },
            "embedder_info": dict(self.embedder_info),
            "prompt_digest": self.prompt_digest,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "sample_seed": self.sample_seed,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(
            run_id=data["run_id"],
            dataset=data["dataset"],
            qa_digest=data["qa_digest"],
            corpus_digest=data["corpus_digest"],
            plan_seed=data["plan_seed"],
            num_shards=data["num_shards"],
            plan_digest=data["plan_digest"],
            scales=list(data["scales"]),
            order=data["order"],
            models=[
                GeneratorSpec(
                    model_id=m["model_id"],
                    kind=m["kind"],
                    endpoint=m.get("endpoint", ""),
                    temperature=m["temperature"],
                    max_tokens=m["max_tokens"],
                )
                for m in data["models"]
            ],
            retrieval=RetrievalParams(**data["retrieval"]),
            embedder_info=dict(data["embedder_info"]),
            prompt_digest=data["prompt_digest"],
            temperature=data["temperature"],
            max_tokens=data["max_tokens"],
            sample_seed=data.get("sample_seed"),
            created_at=data.get("created_at", ""),
        )

    def save(self, run_dir: str | Path) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8")
        return path

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        if not path.exists():
            raise MissingArtifactError(f"no manifest at {path}")
        return cls.from_dict(json.loads(path.read_text("utf-8")))


def plan_run(
    run_dir: str | Path,
    *,
    dataset: str,
    corpus: CorpusStore,
    qa_items: Sequence[QAItem],
    shard_plan: ShardPlan,
    scales: Sequence[int],
    order: str,
    models: Sequence[GeneratorSpec],
    retrieval: RetrievalParams = RetrievalParams(),
    embedder_info: Mapping | None = None,
    index_root: str | Path | None = None,
    run_id: str = "",
    sample_seed: int | None = None,
) -> RunManifest:
    """Enumerate the (scale, model) grid and persist the manifest before
    any work starts. References to missing artifacts fail here, by name."""
    if not qa_items:
        raise MissingArtifactError("QA set is empty")
    if len(corpus) == 0:
        raise MissingArtifactError("corpus is empty")
    for n in scales:
        if not 0 <= n <= shard_plan.num_shards:
            raise ConfigError(f"scale {n} outside [0..{shard_plan.num_shards}]")
    if len(set(scales)) != len(scales):
        raise ConfigError("scales contains duplicates")
    ids = [spec.model_id for spec in models]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate model_id in {ids}")
    decodings = {spec.decoding_params() for spec in models}
    if len(decodings) > 1:
        raise ConfigError("decoding params must be identical across all generators in a run")
    if index_root is not None:
        needed = set()
        for n in scales:
            if n >= 1:
                needed.update(active_shards(shard_plan, ActiveScale(n, order)))  # type: ignore[arg-type]
        for shard_index in sorted(needed):
            path = index_path(index_root, shard_plan, shard_index, retrieval.index_kind)
            if not path.exists():
                raise MissingArtifactError(f"missing index for shard {shard_index}: {path}")

    manifest = RunManifest(
        run_id=run_id,
        dataset=dataset,
        qa_digest=qa_digest(qa_items),
        corpus_digest=corpus.digest(),
        plan_seed=shard_plan.seed,
        num_shards=shard_plan.num_shards,
        plan_digest=shard_plan.digest(),
        scales=list(scales),
        order=order,
        models=list(models),
        retrieval=retrieval,
        embedder_info=dict(embedder_info or {}),
        prompt_digest=prompt_template_digest(),
        temperature=models[0].temperature if models else 0.0,
        max_tokens=models[0].max_tokens if models else 0,
        sample_seed=sample_seed,
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    if not manifest.run_id:
        core = json.dumps(manifest.core_dict(), sort_keys=True).encode("utf-8")
        manifest.run_id = hashlib.sha256(core).hexdigest()[:12]

    run_dir = Path(run_dir)
    existing_log = run_dir / LOG_NAME
    if (run_dir / MANIFEST_NAME).exists():
        stored = RunManifest.load(run_dir)
        if stored.core_dict() == manifest.core_dict():
            return stored
        if existing_log.exists() and existing_log.stat().st_size > 0:
            raise IntegrityError(
                f"run {run_dir} already has records under a different manifest"
            )
    manifest.save(run_dir)
    return manifest


class _RunLock:
    def __init__(self, run_dir: Path):
        self.path = run_dir / LOCK_NAME

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.path.touch(exist_ok=False)
        except FileExistsError:
            raise ConfigError(
                f"run {self.path.parent} is locked by another execute "
                f"(remove {self.path} if that run is dead)"
            ) from None
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def execute(
    run_dir: str | Path,
    manifest: RunManifest,
    *,
    corpus: CorpusStore,
    shard_plan: ShardPlan,
    indices: Mapping[int, ShardIndex],
    embedder: Embedder,
    qa_items: Sequence[QAItem],
    generators: Mapping[str, Generator],
    limits: ExecutionLimits = ExecutionLimits(),
) -> list[GenerationRecord]:
    """Run every incomplete (query, model, scale) cell and persist records.

    Completed cells (keyed by query_id, model_id, n, order) are skipped,
    so re-invoking after a crash resumes instead of duplicating. Cell
    order is deterministic: scales in manifest order, then queries in
    file order, then models in manifest order.
    """
    run_dir = Path(run_dir)
    stored = RunManifest.load(run_dir)
    if stored.core_dict() != manifest.core_dict():
        raise IntegrityError(f"manifest mismatch for run {run_dir}: manifests are immutable")
    if qa_digest(qa_items) != manifest.qa_digest:
        raise IntegrityError("QA set does not match the manifest digest")
    if corpus.digest() != manifest.corpus_digest:
        raise IntegrityError("corpus does not match the manifest digest")
    if shard_plan.digest() != manifest.plan_digest:
        raise IntegrityError("shard plan does not match the manifest digest")
    for model_id in manifest.model_ids:
        if model_id not in generators:
            raise MissingArtifactError(f"no generator supplied for model {model_id!r}")

    log_path = run_dir / LOG_NAME
    truncate_to_sealed(log_path)
    existing = load_records(log_path, resume=True)
    done = set()
    for record in existing:
        if record.key in done:
            raise IntegrityError(f"record log {log_path} has duplicate key {record.key}")
        done.add(record.key)

    bundles = BundleStore(run_dir / BUNDLE_DIR)
    search_pool = (
        ThreadPoolExecutor(max_workers=limits.search_concurrency)
        if limits.search_concurrency > 1
        else None
    )
    gen_pool = (
        ThreadPoolExecutor(max_workers=limits.generate_concurrency)
        if limits.generate_concurrency > 1
        else None
    )
    retriever = Retriever(
        shard_plan, indices, corpus, embedder, manifest.retrieval, executor=search_pool
    )
    records = list(existing)
    try:
        with _RunLock(run_dir), RecordLog(log_path) as log:
            for n in manifest.scales:
                scale = ActiveScale(n, manifest.order)  # type: ignore[arg-type]
                for qa in qa_items:
                    todo = [
                        m for m in manifest.model_ids
                        if (qa.query_id, m, n, manifest.order) not in done
                    ]
                    if not todo:
                        continue
                    bundle = retriever.evidence(qa, scale)
                    if n >= 1:
                        bundles.save(bundle)
                    if gen_pool is not None and len(todo) > 1:
                        futures = [
                            gen_pool.submit(generators[m].generate, qa, bundle) for m in todo
                        ]
                        results = [f.result() for f in futures]
                    else:
                        results = [generators[m].generate(qa, bundle) for m in todo]
                    for record in results:
                        log.append(record)
                        done.add(record.key)
                        records.append(record)
    finally:
        if search_pool is not None:
            search_pool.shutdown(wait=False, cancel_futures=True)
        if gen_pool is not None:
            gen_pool.shutdown(wait=False, cancel_futures=True)
    return records


@dataclass
class AnalysisReport:
    dataset: str
    model_order: list[str]
    f1_grid: ScoreGrid
    em_grid: ScoreGrid
    catchup: dict[tuple[str, str], int | None] = field(default_factory=dict)
    known: dict[str, float] = field(default_factory=dict)
    cb_series: dict[str, CBSeries] = field(default_factory=dict)


def catchup_matrix(
    f1_grid: ScoreGrid, em_grid: ScoreGrid, model_order: Sequence[str]
) -> dict[tuple[str, str], int | None]:
    """Catch-up thresholds for every adjacent (smaller, larger) pair in
    the declared size ladder."""
    out: dict[tuple[str, str], int | None] = {}
    for small, large in zip(model_order, model_order[1:]):
        out[(small, large)] = catch_up(f1_grid, em_grid, small, large)
    return out


def analyze_grids(
    f1_grid: ScoreGrid,
    em_grid: ScoreGrid,
    model_order: Sequence[str] | None = None,
    dataset: str = "",
) -> AnalysisReport:
    """Analysis over pre-built score grids (e.g. ingested fixtures)."""
    order = list(model_order) if model_order else list(f1_grid.models)
    return AnalysisReport(
        dataset=dataset or f1_grid.dataset,
        model_order=order,
        f1_grid=f1_grid,
        em_grid=em_grid,
        catchup=catchup_matrix(f1_grid, em_grid, order),
    )


def analyze_run(
    run_dir: str | Path,
    qa_items: Sequence[QAItem],
    include_cb: bool | None = None,
) -> AnalysisReport:
    """Analysis over a persisted run: grids, catch-up matrix, and (when
    closed-book rows exist) per-model CB/coverage/utilization series."""
    run_dir = Path(run_dir)
    manifest = RunManifest.load(run_dir)
    if qa_digest(qa_items) != manifest.qa_digest:
        raise IntegrityError("QA set does not match the manifest digest")
    records = load_records(run_dir / LOG_NAME)
    if not records:
        raise MissingArtifactError(f"run {run_dir} has no records")

    f1_grid = score_grid(records, qa_items, "F1")
    em_grid = score_grid(records, qa_items, "EM")
    f1_grid.dataset = em_grid.dataset = manifest.dataset
    report = AnalysisReport(
        dataset=manifest.dataset,
        model_order=manifest.model_ids,
        f1_grid=f1_grid,
        em_grid=em_grid,
        catchup=catchup_matrix(f1_grid, em_grid, manifest.model_ids),
    )

    has_closed_book = 0 in manifest.scales
    if include_cb is None:
        include_cb = has_closed_book
    if include_cb and not has_closed_book:
        raise MissingArtifactError("CB analysis requires closed-book (n=0) rows in the run")
    if not include_cb:
        return report

    coverage = _coverage_by_scale(run_dir, manifest, records, qa_items)
    for model_id in manifest.model_ids:
        series = build_cb_series(records, qa_items, model_id, coverage)
        report.cb_series[model_id] = series
        report.known[model_id] = series.known
    return report


def _coverage_by_scale(
    run_dir: Path,
    manifest: RunManifest,
    records: Sequence[GenerationRecord],
    qa_items: Sequence[QAItem],
) -> dict[int, dict[str, bool]]:
    """query -> gold-in-evidence hits per scale, replayed from the bundle
    store (retrieval is model-independent, so any model's digest works)."""
    store = BundleStore(run_dir / BUNDLE_DIR)
    digests: dict[tuple[int, str], str] = {}
    for record in records:
        if record.n >= 1 and record.bundle_digest:
            digests.setdefault((record.n, record.query_id), record.bundle_digest)
    cache: dict[str, bool] = {}
    golds = {item.query_id: item.gold_answers for item in qa_items}
    out: dict[int, dict[str, bool]] = {}
    for (n, query_id), digest in sorted(digests.items()):
        key = digest + query_id
        if key not in cache:
            cache[key] = coverage_hit(store.load(digest), golds[query_id])
        out.setdefault(n, {})[query_id] = cache[key]
    return out


def _format_rate(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def report(analysis: AnalysisReport, out_dir: str | Path) -> list[Path]:
    """Emit delimited tables, plot-data files and a plain-text summary.

    Output is deterministic: re-running over the same analysis produces
    identical bytes. Grid files reuse the score-grid fixture schema
    (dataset, metric, model, n, score) so they can be re-ingested.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for grid in (analysis.f1_grid, analysis.em_grid):
        lines = ["dataset,metric,model,n,score"]
        plot = ["x,y,series"]
        for model in analysis.model_order:
            for n in grid.scales:
                value = grid.cell(n, model)
                if value is None:
                    continue
                lines.append(f"{grid.dataset},{grid.metric},{model},{n},{value:.2f}")
                plot.append(f"{n},{value:.2f},{model}")
        written.append(_write(out_dir / f"grid_{grid.metric.lower()}.csv", lines))
        written.append(_write(out_dir / f"plot_{grid.metric.lower()}.csv", plot))

    lines = ["small,large,n_star"]
    for (small, large), n_star in analysis.catchup.items():
        lines.append(f"{small},{large},{'none' if n_star is None else n_star}")
    written.append(_write(out_dir / "catchup.csv", lines))

    if analysis.cb_series:
        lines = ["model,n,cb,delta,coverage,coverage_all,ratio,known"]
        plots = {name: ["x,y,series"] for name in ("cb", "delta", "coverage", "ratio")}
        for model in analysis.model_order:
            series = analysis.cb_series[model]
            for n in series.scales():
                delta = series.delta.get(n)
                row = ",".join(
                    (
                        model,
                        str(n),
                        f"{series.cb[n]:.6f}",
                        _format_rate(delta),
                        f"{series.coverage[n]:.6f}",
                        f"{series.coverage_all[n]:.6f}",
                        _format_rate(series.ratio[n]),
                        f"{series.known:.6f}",
                    )
                )
                lines.append(row)
                plots["cb"].append(f"{n},{series.cb[n]:.6f},{model}")
                if delta is not None:
                    plots["delta"].append(f"{n},{delta:.6f},{model}")
                plots["coverage"].append(f"{n},{series.coverage[n]:.6f},{model}")
                if series.ratio[n] is not None:
                    plots["ratio"].append(f"{n},{series.ratio[n]:.6f},{model}")
        written.append(_write(out_dir / "cb_series.csv", lines))
        for name, rows in plots.items():
            written.append(_write(out_dir / f"plot_{name}.csv", rows))

    written.append(_write(out_dir / "summary.txt", _summary_lines(analysis)))
    return written


def _summary_lines(analysis: AnalysisReport) -> list[str]:
    lines = [f"dataset: {analysis.dataset}", f"models: {', '.join(analysis.model_order)}"]
    scales = analysis.f1_grid.scales
    if scales:
        lines.append(f"scales: {min(scales)}..{max(scales)}")
    lines.append("")
    lines.append("catch-up thresholds (scale where the smaller model meets the larger"
                 " model's single-shard baseline):")
    for (small, large), n_star in analysis.catchup.items():
        shown = "no catch-up" if n_star is None else str(n_star)
        lines.append(f"  {small} -> {large}: {shown}")
    if analysis.known:
        lines.append("")
        lines.append("closed-book known rates:")
        for model in analysis.model_order:
            lines.append(f"  {model}: {analysis.known[model]:.4f}")
    return lines


def _write(path: Path, lines: list[str]) -> Path:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
