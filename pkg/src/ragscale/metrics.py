"""Answer scoring and corpus-scaling trade-off metrics.

Normalization follows the usual open-domain QA evaluation rules
(lowercase, strip punctuation, drop articles, collapse whitespace); EM
and F1 are computed against the best-matching gold alias. On top of the
per-question scores sit the aggregate series: score grids over
(scale, model), the catch-up threshold at which a smaller model meets a
larger model's single-shard baseline, gold-answer coverage, the
context-benefited success rate (CB), its per-shard deltas, and the
utilization ratio CB/coverage.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .corpus import QAItem
from .errors import IntegrityError, MissingArtifactError

if TYPE_CHECKING:
    from .generate import GenerationRecord
    from .retrieve import EvidenceBundle

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLES = frozenset({"a", "an", "the"})


def normalize_answer(text: str) -> list[str]:
    """Normalize to a token list: lowercase, strip punctuation characters,
    drop articles, collapse whitespace."""
    stripped = text.lower().translate(_PUNCT_TABLE)
    return [tok for tok in stripped.split() if tok not in _ARTICLES]


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold alias."""
    if not gold_answers:
        raise ValueError("gold_answers must be non-empty")
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(alias) for alias in gold_answers))


def f1(prediction: str, gold_answers: Sequence[str]) -> float:
    """Best token-level F1 over the gold aliases (multiset overlap)."""
    if not gold_answers:
        raise ValueError("gold_answers must be non-empty")
    pred = normalize_answer(prediction)
    best = 0.0
    for alias in gold_answers:
        gold = normalize_answer(alias)
        if not pred or not gold:
            score = float(pred == gold)
        else:
            overlap = sum((Counter(pred) & Counter(gold)).values())
            if overlap == 0:
                score = 0.0
            else:
                precision = overlap / len(pred)
                recall = overlap / len(gold)
                score = 2 * precision * recall / (precision + recall)
        best = max(best, score)
    return best


def _contains_tokens(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    if not needle or len(needle) > len(haystack):
        return False
    first = needle[0]
    span = len(needle)
    for i in range(len(haystack) - span + 1):
        if haystack[i] == first and list(haystack[i : i + span]) == list(needle):
            return True
    return False


def find_contained_alias(tokens: Sequence[str], gold_answers: Sequence[str]) -> str | None:
    """First alias (in list order) whose normalized token sequence occurs
    contiguously in ``tokens``; None if none does."""
    for alias in gold_answers:
        if _contains_tokens(tokens, normalize_answer(alias)):
            return alias
    return None


def coverage_hit(bundle: "EvidenceBundle", gold_answers: Sequence[str]) -> bool:
    """True iff any chunk in the bundle contains a gold alias under EM
    normalization (contiguous token subsequence)."""
    for chunk in bundle.chunks:
        if find_contained_alias(normalize_answer(chunk.text), gold_answers) is not None:
            return True
    return False


@dataclass
class ScoreGrid:
    """Mean scores (0-100 scale) over (corpus scale, model) cells.

    Missing cells are holes: absent keys, never zeros. The n=1 column is
    the baseline for catch-up queries.
    """

    dataset: str
    metric: str  # "F1" | "EM"
    scales: tuple[int, ...]
    models: tuple[str, ...]
    values: dict[tuple[int, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in ("F1", "EM"):
            raise ValueError(f"metric must be 'F1' or 'EM', got {self.metric!r}")
        for key, score in self.values.items():
            if not 0.0 <= score <= 100.0:
                raise ValueError(f"score {score} at {key} outside [0, 100]")

    def cell(self, n: int, model: str) -> float | None:
        return self.values.get((n, model))

    def get(self, n: int, model: str) -> float:
        score = self.values.get((n, model))
        if score is None:
            raise MissingArtifactError(
                f"{self.dataset}/{self.metric}: no cell for scale {n}, model {model!r}"
            )
        return score


def score_grid(
    records: Iterable["GenerationRecord"],
    qa_items: Sequence[QAItem],
    metric: str,
) -> ScoreGrid:
    """Aggregate per-question scores into a (scale, model) grid.

    A cell is a hole unless every question in ``qa_items`` has exactly
    one record for it; duplicates are an integrity error.
    """
    scorer = exact_match if metric == "EM" else f1
    if metric not in ("EM", "F1"):
        raise ValueError(f"metric must be 'F1' or 'EM', got {metric!r}")
    golds = {item.query_id: item.gold_answers for item in qa_items}

    per_cell: dict[tuple[int, str], dict[str, float]] = {}
    for record in records:
        if record.query_id not in golds:
            continue
        cell = per_cell.setdefault((record.n, record.model_id), {})
        if record.query_id in cell:
            raise IntegrityError(
                f"duplicate record for query={record.query_id!r} "
                f"model={record.model_id!r} n={record.n}"
            )
        cell[record.query_id] = float(scorer(record.prediction, golds[record.query_id]))

    scales = tuple(sorted({n for n, _ in per_cell}))
    models = tuple(sorted({m for _, m in per_cell}))
    values: dict[tuple[int, str], float] = {}
    for key, scored in per_cell.items():
        if len(scored) == len(golds):  # incomplete cells stay holes
            values[key] = 100.0 * sum(scored.values()) / len(scored)
    return ScoreGrid(dataset="", metric=metric, scales=scales, models=models, values=values)


def catch_up(
    f1_grid: ScoreGrid,
    em_grid: ScoreGrid,
    x_small: str,
    x_large: str,
) -> int | None:
    """Smallest scale where the smaller model meets or exceeds the larger
    model's n=1 baseline, minimized over F1 and EM; None if neither
    metric ever reaches the baseline."""
    best: int | None = None
    for grid in (f1_grid, em_grid):
        baseline = grid.get(1, x_large)
        for n in sorted(s for s in grid.scales if s >= 1):
            if grid.get(n, x_small) >= baseline:
                if best is None or n < best:
                    best = n
                break
    return best


@dataclass(frozen=True)
class ConditionalRate:
    """A rate over a conditioning population, with the population size so
    the degenerate empty case stays visible instead of reading as 0/0."""

    value: float
    population: int

    @property
    def empty_population(self) -> bool:
        return self.population == 0


def _records_by_query(
    records: Iterable["GenerationRecord"], model_id: str, n: int
) -> dict[str, "GenerationRecord"]:
    return {r.query_id: r for r in records if r.model_id == model_id and r.n == n}


def _em_by_query(
    records: Iterable["GenerationRecord"],
    qa_items: Sequence[QAItem],
    model_id: str,
    n: int,
) -> dict[str, int]:
    by_query = _records_by_query(records, model_id, n)
    missing = [item.query_id for item in qa_items if item.query_id not in by_query]
    if missing:
        raise MissingArtifactError(
            f"model {model_id!r} has no records at n={n} for {len(missing)} queries "
            f"(first: {missing[0]!r})"
        )
    return {
        item.query_id: exact_match(by_query[item.query_id].prediction, item.gold_answers)
        for item in qa_items
    }


def known_rate(
    records: Iterable["GenerationRecord"],
    qa_items: Sequence[QAItem],
    model_id: str,
) -> float:
    """Fraction of questions answered correctly closed-book (n=0)."""
    em0 = _em_by_query(list(records), qa_items, model_id, 0)
    return sum(em0.values()) / len(em0)


def cb_at(
    records: Iterable["GenerationRecord"],
    qa_items: Sequence[QAItem],
    model_id: str,
    n: int,
) -> ConditionalRate:
    """Context-benefited success rate: among questions wrong closed-book,
    the fraction correct at scale n. Zero by construction at n=0."""
    records = list(records)
    em0 = _em_by_query(records, qa_items, model_id, 0)
    unknown = [qid for qid, em in em0.items() if em == 0]
    if not unknown:
        return ConditionalRate(0.0, 0)
    if n == 0:
        return ConditionalRate(0.0, len(unknown))
    qa_by_id = {item.query_id: item for item in qa_items}
    em_n = _em_by_query(records, [qa_by_id[q] for q in unknown], model_id, n)
    return ConditionalRate(sum(em_n.values()) / len(unknown), len(unknown))


def cb_delta(series: "CBSeries", n: int) -> float:
    """Marginal CB gain from scale n-1 to n (may be negative)."""
    if n < 1:
        raise ValueError(f"cb_delta requires n >= 1, got {n}")
    try:
        return series.cb[n] - series.cb[n - 1]
    except KeyError as exc:
        raise MissingArtifactError(f"CB series for {series.model_id!r} lacks scale {exc}") from None


def utilization_ratio(cb: float, coverage: float) -> float | None:
    """CB divided by coverage; undefined (None) when coverage is zero."""
    if coverage == 0:
        return None
    return cb / coverage


@dataclass
class CBSeries:
    """Per-model coverage/CB/utilization series over corpus scales.

    ``coverage`` is conditional on the CB population (questions wrong
    closed-book) and feeds the ratio; ``coverage_all`` is the
    unconditional rate over every question.
    """

    model_id: str
    known: float
    population: int
    cb: dict[int, float]
    delta: dict[int, float]
    coverage: dict[int, float]
    coverage_all: dict[int, float]
    ratio: dict[int, float | None]

    @property
    def empty_population(self) -> bool:
        return self.population == 0

    def scales(self) -> list[int]:
        return sorted(self.cb)


def build_cb_series(
    records: Iterable["GenerationRecord"],
    qa_items: Sequence[QAItem],
    model_id: str,
    coverage_by_query: Mapping[int, Mapping[str, bool]],
) -> CBSeries:
    """Assemble the full CB series for one model.

    ``coverage_by_query`` maps scale -> query_id -> whether that query's
    evidence bundle contained a gold alias at that scale.
    """
    records = list(records)
    scales = sorted({r.n for r in records if r.model_id == model_id})
    if 0 not in scales:
        raise MissingArtifactError(f"model {model_id!r} has no closed-book (n=0) records")
    em0 = _em_by_query(records, qa_items, model_id, 0)
    unknown = [qid for qid, em in em0.items() if em == 0]

    cb: dict[int, float] = {}
    coverage: dict[int, float] = {}
    coverage_all: dict[int, float] = {}
    ratio: dict[int, float | None] = {}
    for n in scales:
        stat = cb_at(records, qa_items, model_id, n)
        cb[n] = stat.value
        hits = coverage_by_query.get(n, {})
        if n == 0:
            coverage[n] = 0.0
            coverage_all[n] = 0.0
        else:
            coverage[n] = (
                sum(1 for q in unknown if hits.get(q, False)) / len(unknown) if unknown else 0.0
            )
            coverage_all[n] = sum(1 for item in qa_items if hits.get(item.query_id, False)) / len(
                qa_items
            )
        ratio[n] = utilization_ratio(cb[n], coverage[n])

    series = CBSeries(
        model_id=model_id,
        known=sum(em0.values()) / len(em0),
        population=len(unknown),
        cb=cb,
        delta={},
        coverage=coverage,
        coverage_all=coverage_all,
        ratio=ratio,
    )
    series.delta = {n: cb_delta(series, n) for n in scales if n >= 1 and (n - 1) in cb}
    return series
