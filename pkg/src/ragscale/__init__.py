"""ragscale: corpus-scaling experimentation harness for RAG.

Partitions a corpus into balanced random shards, retrieves over a
scale-parameterized shard prefix into a fixed evidence budget, generates
answers with pluggable generators, and computes the corpus-vs-model
trade-off metrics: score grids, catch-up thresholds, gold-answer
coverage, context-benefited success rates and utilization ratios.
"""

from .corpus import (
    ActiveScale,
    CorpusStore,
    Document,
    QAItem,
    ShardPlan,
    active_shards,
    ingest_corpus,
    load_qa,
    partition,
)
from .embed import HashingEmbedder, RemoteEmbedder, embed_texts
from .errors import (
    ConfigError,
    ConflictError,
    IngestError,
    IntegrityError,
    MissingArtifactError,
    ParseError,
    RagScaleError,
    TransportError,
)
from .experiment import (
    AnalysisReport,
    ExecutionLimits,
    RunManifest,
    analyze_grids,
    analyze_run,
    catchup_matrix,
    execute,
    plan_run,
    report,
)
from .generate import (
    GenerationRecord,
    GeneratorSpec,
    OracleGenerator,
    RemoteGenerator,
    generate,
    oracle_answer,
    render_prompt,
)
from .index import ScoredDoc, ShardIndex, build_index, load_index, save_index, search
from .metrics import (
    CBSeries,
    ScoreGrid,
    catch_up,
    cb_at,
    cb_delta,
    coverage_hit,
    exact_match,
    f1,
    known_rate,
    normalize_answer,
    score_grid,
    utilization_ratio,
)
from .retrieve import (
    Chunk,
    EvidenceBundle,
    RetrievalParams,
    Retriever,
    assemble_evidence,
    chunk_documents,
    rerank,
    retrieve_topk,
)

__version__ = "0.1.0"
