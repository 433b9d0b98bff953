"""Experiment configuration: a flat key = value text file.

Lists are comma-separated; scale lists also accept "lo..hi" ranges.
Models are "kind:model_id" entries (kind oracle or remote). Unknown keys
are rejected so typos surface instead of silently using defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .generate import GeneratorSpec
from .retrieve import RetrievalParams


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    corpus_path: str = ""
    qa_path: str = ""
    index_root: str = "indices"
    seed: int = 42
    num_shards: int = 12
    scales: list[int] = field(default_factory=lambda: list(range(0, 13)))
    order: str = "forward"
    index_kind: str = "exact"
    embedder: str = "hashing"
    dims: int = 64
    embed_seed: int = 0
    models: list[str] = field(default_factory=lambda: ["oracle:oracle"])
    k: int = 10
    m: int = 8
    chunk_tokens: int = 256
    overlap_tokens: int = 64
    temperature: float = 0.0
    max_tokens: int = 64
    search_concurrency: int = 8
    embed_concurrency: int = 4
    generate_concurrency: int = 4
    sample_seed: int | None = None
    run_id: str = ""

    def retrieval_params(self) -> RetrievalParams:
        return RetrievalParams(
            k=self.k,
            m=self.m,
            chunk_tokens=self.chunk_tokens,
            overlap_tokens=self.overlap_tokens,
            index_kind=self.index_kind,
        )

    def generator_specs(self) -> list[GeneratorSpec]:
        specs = []
        for entry in self.models:
            kind, _, model_id = entry.partition(":")
            if not model_id or kind not in ("oracle", "remote"):
                raise ConfigError(
                    f"model entry {entry!r} must be 'oracle:<model_id>' or 'remote:<model_id>'"
                )
            specs.append(
                GeneratorSpec(
                    model_id=model_id,
                    kind=kind,
                    temperature=self.temperature,
                    max_tokens=self.max_tokens,
                )
            )
        return specs


def _parse_scales(raw: str) -> list[int]:
    scales: list[int] = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            scales.extend(range(int(lo), int(hi) + 1))
        else:
            scales.append(int(part))
    return scales


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path) -> ExperimentConfig:
    raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
    config = ExperimentConfig()
    known = {f.name: f for f in fields(ExperimentConfig)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "scales":
            config.scales = _parse_scales(value)
        elif key == "models":
            config.models = [part.strip() for part in value.split(",") if part.strip()]
        elif key == "sample_seed":
            config.sample_seed = int(value) if value else None
        else:
            current = getattr(config, key)
            caster = type(current)
            try:
                setattr(config, key, caster(value))
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None
    _validate(config)
    return config


def _validate(config: ExperimentConfig) -> None:
    if config.num_shards < 1:
        raise ConfigError("num_shards must be >= 1")
    if config.order not in ("forward", "reversed"):
        raise ConfigError(f"order must be forward or reversed, got {config.order!r}")
    if config.index_kind not in ("exact", "approximate"):
        raise ConfigError(f"index_kind must be exact or approximate, got {config.index_kind!r}")
    if config.embedder not in ("hashing", "remote"):
        raise ConfigError(f"embedder must be hashing or remote, got {config.embedder!r}")
    if not config.scales:
        raise ConfigError("scales must be non-empty")
    if any(n < 0 for n in config.scales):
        raise ConfigError("scales must be >= 0")
    if len(set(config.scales)) != len(config.scales):
        raise ConfigError("scales contains duplicates")
    if not config.models:
        raise ConfigError("at least one model is required")
    config.generator_specs()  # validates model entries
