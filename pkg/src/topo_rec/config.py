"""Pipeline configuration loaded from a nested YAML file.

Example::

    dataset:
      name: fixture
      path: bundled:fixture_500x400.tsv   # or a path relative to this file
    seed: 0
    workers: 1
    output: runs/fixture
    generation: {sample_count: 8, rate_range: [0.7, 0.9], min_users: 20}
    models:
      lightgcn: {max_epochs: 50, embedding_dim: 32}
    metrics: {names: [recall, ndcg], k: 20}
    split: {test_ratio: 0.2, val_ratio: 0.1}
    explainer: {standardize: true, thresholds: [0.001, 0.01, 0.05]}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .errors import ConfigError
from .evaluation import METRICS
from .explainer import ExplainerConfig
from .models.training import MODEL_KINDS, TrainConfig
from .sampler import GenerationConfig

BUNDLED_PREFIX = "bundled:"


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("topo_rec") / "data" / name))


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    path: str

    def resolve(self, base: Optional[Path] = None) -> Path:
        if self.path.startswith(BUNDLED_PREFIX):
            return bundled_path(self.path[len(BUNDLED_PREFIX):])
        p = Path(self.path)
        if not p.is_absolute() and base is not None:
            p = base / p
        return p


@dataclass(frozen=True)
class MetricsConfig:
    names: tuple[str, ...] = ("recall", "ndcg")
    k: int = 20

    @property
    def columns(self) -> list[str]:
        return [f"{n}@{self.k}" for n in self.names]


@dataclass(frozen=True)
class SplitConfig:
    test_ratio: float = 0.2
    val_ratio: float = 0.1


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetConfig
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    models: Mapping[str, TrainConfig] = field(default_factory=lambda: {"lightgcn": TrainConfig()})
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    explainer: ExplainerConfig = field(default_factory=ExplainerConfig)
    output: str = "runs/default"
    workers: int = 1
    seed: int = 0
    # directory of the config file; relative dataset paths resolve against it
    base_dir: Optional[str] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not self.models:
            raise ConfigError("at least one model must be configured")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigError(f"unknown model {m!r}; choose from {', '.join(MODEL_KINDS)}")
        for n in self.metrics.names:
            if n not in METRICS:
                raise ConfigError(f"unknown metric {n!r}; choose from {', '.join(METRICS)}")
        if self.metrics.k < 1:
            raise ConfigError("metrics.k must be >= 1")
        # the top-level seed is the master seed for every derived stream
        if self.generation.master_seed != self.seed:
            object.__setattr__(self, "generation", replace(self.generation, master_seed=self.seed))

    @property
    def dataset_path(self) -> Path:
        return self.dataset.resolve(Path(self.base_dir) if self.base_dir else None)

    @property
    def output_dir(self) -> Path:
        return Path(self.output)

    def with_overrides(self, seed=None, workers=None, output=None) -> "PipelineConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if workers is not None:
            changes["workers"] = int(workers)
        if output is not None:
            changes["output"] = str(output)
        return replace(self, **changes) if changes else self

    def validate_paths(self) -> None:
        if not self.dataset_path.is_file():
            raise ConfigError(f"dataset file not found: {self.dataset_path}")

    def to_mapping(self) -> dict:
        return {
            "dataset": asdict(self.dataset),
            "generation": _plain(asdict(self.generation)),
            "models": {m: asdict(c) for m, c in sorted(self.models.items())},
            "metrics": _plain(asdict(self.metrics)),
            "split": asdict(self.split),
            "explainer": _plain(asdict(self.explainer)),
            "output": self.output,
            "workers": self.workers,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        """Digest of everything that changes results (not workers or output)."""
        m = self.to_mapping()
        del m["workers"], m["output"]
        blob = json.dumps(m, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _section(raw: Mapping, key: str) -> dict:
    sec = raw.get(key) or {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"section {key!r} must be a mapping")
    return dict(sec)


def _build(cls, mapping: Mapping, where: str, tuples=()):
    known = {f.name for f in fields(cls)}
    extra = set(mapping) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    kwargs = {k: (tuple(v) if k in tuples and v is not None else v) for k, v in mapping.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


TOP_LEVEL = {"dataset", "generation", "models", "metrics", "split", "explainer", "output", "workers", "seed"}


def config_from_mapping(raw: Mapping, base_dir: Optional[Path] = None) -> PipelineConfig:
    extra = set(raw) - TOP_LEVEL
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    ds = _section(raw, "dataset")
    if "path" not in ds:
        raise ConfigError("dataset.path is required")
    dataset = _build(DatasetConfig, {"name": ds.get("name") or Path(ds["path"]).stem, "path": str(ds["path"])},
                     "dataset")
    seed = int(raw.get("seed", 0))
    gen = _section(raw, "generation")
    if "master_seed" in gen:
        raise ConfigError("set the master seed with the top-level 'seed' key")
    gen["master_seed"] = seed
    generation = _build(GenerationConfig, gen, "generation", tuples=("rate_range",))
    models_raw = raw.get("models") or {"lightgcn": {}}
    if isinstance(models_raw, (list, tuple)):
        models_raw = {m: {} for m in models_raw}
    models = {str(m): TrainConfig.from_mapping(opts or {}) for m, opts in models_raw.items()}
    cfg = PipelineConfig(
        dataset=dataset,
        generation=generation,
        models=models,
        metrics=_build(MetricsConfig, _section(raw, "metrics"), "metrics", tuples=("names",)),
        split=_build(SplitConfig, _section(raw, "split"), "split"),
        explainer=_build(ExplainerConfig, _section(raw, "explainer"), "explainer", tuples=("thresholds", "alphas")),
        output=str(raw.get("output", "runs/default")),
        workers=int(raw.get("workers", 1)),
        seed=seed,
        base_dir=str(base_dir) if base_dir is not None else None,
    )
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_mapping(raw, base_dir=path.resolve().parent)
