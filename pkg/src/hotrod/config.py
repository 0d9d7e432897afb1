"""Pipeline configuration: a YAML tree of nested settings plus dotted-path overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .hawkes import BasisSpec
from .preprocess import ImputeConfig, SgConfig
from .ticc import TiccConfig

FEATURE_SETS = ("summary", "hotrod", "combined")
WORKERS_ENV = "HOTROD_WORKERS"


class ConfigError(ValueError):
    """Invalid configuration (exit code 3)."""


@dataclass(frozen=True)
class HawkesConfig:
    centers: tuple[float, ...] = (5.0, 20.0, 60.0)
    sigma: float = 10.0
    l1: float = 0.01
    group: float = 0.05
    epsilon: float = 0.01
    max_iter: int = 2000
    tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        self.basis  # validates centers / sigma
        if self.l1 < 0 or self.group < 0 or self.epsilon < 0:
            raise ValueError("penalties and epsilon must be >= 0")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("need max_iter >= 1 and tol > 0")

    @property
    def basis(self) -> BasisSpec:
        return BasisSpec(self.centers, self.sigma)


@dataclass(frozen=True)
class FeatureConfig:
    n_days: int = 5
    max_hr: float = 190.0

    def __post_init__(self):
        if self.n_days < 1 or self.max_hr <= 0:
            raise ValueError("need n_days >= 1 and max_hr > 0")


@dataclass(frozen=True)
class EvalConfig:
    feature_sets: tuple[str, ...] = FEATURE_SETS
    n_splits: int = 5
    inner_splits: int = 3

    def __post_init__(self):
        sets = (self.feature_sets,) if isinstance(self.feature_sets, str) else self.feature_sets
        object.__setattr__(self, "feature_sets", tuple(sets))
        bad = [s for s in self.feature_sets if s not in FEATURE_SETS]
        if bad or not self.feature_sets:
            raise ValueError(f"feature_sets must be drawn from {FEATURE_SETS}")
        if self.n_splits < 2 or self.inner_splits < 2:
            raise ValueError("need at least 2 folds")


@dataclass(frozen=True)
class PathsConfig:
    input_dir: str = "data"
    work_dir: str = "out"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    utc_offset: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    impute: ImputeConfig = field(default_factory=ImputeConfig)
    sg: SgConfig = field(default_factory=SgConfig)
    ticc: TiccConfig = field(default_factory=TiccConfig)
    hawkes: HawkesConfig = field(default_factory=HawkesConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ValueError("seed must be an integer")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))

    def section_hash(self, *names: str) -> str:
        """Digest of the named sections (all result-affecting settings when empty)."""
        d = self.to_dict()
        # paths and worker count never change results
        d.pop("paths")
        d.pop("workers")
        if names:
            d = {k: d[k] for k in names}
        text = yaml.safe_dump(d, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def hash(self) -> str:
        return self.section_hash()

    @property
    def input_dir(self) -> Path:
        return Path(self.paths.input_dir)

    @property
    def work_dir(self) -> Path:
        return Path(self.paths.work_dir)

    def effective_workers(self) -> int:
        env = os.environ.get(WORKERS_ENV)
        if env is None or env == "":
            return self.workers
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer") from exc
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1")
        return n


def _to_plain(obj):
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


_SECTION_TYPES = {
    "paths": PathsConfig, "impute": ImputeConfig, "sg": SgConfig, "ticc": TiccConfig,
    "hawkes": HawkesConfig, "features": FeatureConfig, "evaluate": EvalConfig,
}


def _build(cls, data: Mapping, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in data.items():
        default = getattr(cls(), k) if k in names else None
        kwargs[k] = _coerce(v, default, f"{where}.{k}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _coerce(v, default, where):
    if isinstance(default, bool):
        if not isinstance(v, bool):
            raise ConfigError(f"{where}: expected true/false")
        return v
    if isinstance(default, int):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                return int(v)
            raise ConfigError(f"{where}: expected an integer, got {v!r}")
        return v
    if isinstance(default, float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {v!r}")
        return float(v)
    if isinstance(default, tuple):
        if isinstance(v, (str, int, float)):
            v = [v]
        if not isinstance(v, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(v)
    if isinstance(default, str) and not isinstance(v, str):
        raise ConfigError(f"{where}: expected a string")
    return v


def config_from_dict(data: Mapping | None) -> PipelineConfig:
    data = dict(data or {})
    kwargs = {}
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    for k, v in data.items():
        if k in _SECTION_TYPES:
            kwargs[k] = _build(_SECTION_TYPES[k], v or {}, k)
        else:
            kwargs[k] = _coerce(v, getattr(PipelineConfig(), k), k)
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply ``a.b=value`` assignments; values are parsed as YAML scalars/lists."""
    data = _to_plain(dict(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from exc
        node = data
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r}: {p} is not a section")
            node = nxt
        node[parts[-1]] = value
    return data


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(apply_overrides(data, overrides))


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
