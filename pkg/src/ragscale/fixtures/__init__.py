"""Score-grid fixtures: delimited text with header dataset,metric,model,n,score.

Bundled grids hold published reference results for three open-domain QA
benchmarks (nq, triviaqa, webq) over 12 corpus scales and the five-tier
model ladder; they drive analysis-only runs and the catch-up tests.
"""

from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path
from typing import Iterable

from ..errors import ParseError
from ..metrics import ScoreGrid

MODEL_LADDER = ("0.6B", "1.7B", "4B", "8B", "14B")
BUNDLED_DATASETS = ("nq", "triviaqa", "webq")

_HEADER = ["dataset", "metric", "model", "n", "score"]


def parse_grid_rows(rows: Iterable[dict], source: str = "<rows>") -> dict[tuple[str, str], ScoreGrid]:
    """Group fixture rows into one ScoreGrid per (dataset, metric)."""
    cells: dict[tuple[str, str], dict[tuple[int, str], float]] = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            dataset, metric, model = row["dataset"], row["metric"], row["model"]
            n, score = int(row["n"]), float(row["score"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{source}: bad fixture row at line {lineno}: {row!r}") from None
        if metric not in ("F1", "EM"):
            raise ParseError(f"{source}: line {lineno}: metric must be F1 or EM, got {metric!r}")
        key = (n, model)
        grid_cells = cells.setdefault((dataset, metric), {})
        if key in grid_cells:
            raise ParseError(f"{source}: line {lineno}: duplicate cell {key} for {dataset}/{metric}")
        grid_cells[key] = score

    grids: dict[tuple[str, str], ScoreGrid] = {}
    for (dataset, metric), values in cells.items():
        scales = tuple(sorted({n for n, _ in values}))
        models = tuple(sorted({m for _, m in values}))
        grids[(dataset, metric)] = ScoreGrid(
            dataset=dataset, metric=metric, scales=scales, models=models, values=values
        )
    return grids


def load_grid_file(path: str | Path) -> dict[tuple[str, str], ScoreGrid]:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _HEADER:
            raise ParseError(
                f"{path}: fixture header must be {','.join(_HEADER)}, "
                f"got {reader.fieldnames}"
            )
        return parse_grid_rows(reader, source=str(path))


def load_bundled(dataset: str) -> tuple[ScoreGrid, ScoreGrid]:
    """Return the (F1, EM) grids bundled for one benchmark."""
    if dataset not in BUNDLED_DATASETS:
        raise ValueError(f"unknown bundled dataset {dataset!r}; have {BUNDLED_DATASETS}")
    ref = resources.files(__package__) / f"{dataset}.csv"
    with resources.as_file(ref) as path:
        grids = load_grid_file(path)
    return grids[(dataset, "F1")], grids[(dataset, "EM")]
