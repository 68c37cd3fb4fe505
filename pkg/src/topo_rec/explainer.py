"""Explanatory regression of recommendation accuracy on dataset characteristics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .characteristics import CHARACTERISTIC_NAMES, CharacteristicsVector, format_float, parse_float
from .errors import InsufficientSamples
from .numerics import OlsFit, ols_fit, pearson_matrix
from .sampler import SamplingSpec, Strategy, floor_count

log = logging.getLogger(__name__)

TIER_LABELS = {3: "***", 2: "**", 1: "*", 0: "n.s."}

# log10 of U, I and E span these five columns, so on real graphs two of them
# are always exact affine combinations of the others
SIZE_DERIVED = ("space_size_log", "shape_log", "density_log", "avg_deg_u_log", "avg_deg_i_log")

RECORD_META = ("sample_id", "strategy", "dropout_rate", "seed", "retries", "n_users", "n_items", "n_edges")


@dataclass
class SampleRecord:
    sample_id: int
    spec: SamplingSpec
    characteristics: CharacteristicsVector
    n_users: int
    n_items: int
    n_edges: int
    # model kind -> metric name (e.g. "recall@20") -> test value
    performance: dict[str, dict[str, float]] = field(default_factory=dict)


def metric_columns(metrics: Sequence[str], k: int) -> list[str]:
    return [f"{m}@{k}" for m in metrics]


def write_records(records: Iterable[SampleRecord], path: str | Path, metric_names: Sequence[str]) -> None:
    """One row per (sample, model), sorted by sample id then model kind."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*RECORD_META, *CHARACTERISTIC_NAMES, "model", *metric_names])
        for r in sorted(records, key=lambda r: r.sample_id):
            meta = [r.sample_id, r.spec.strategy.value, repr(r.spec.dropout_rate), r.spec.seed,
                    r.spec.retries, r.n_users, r.n_items, r.n_edges]
            for model in sorted(r.performance):
                perf = r.performance[model]
                w.writerow([*meta, *r.characteristics.to_row(), model,
                            *(format_float(perf.get(m)) for m in metric_names)])


def read_records(path: str | Path) -> list[SampleRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        metric_names = [c for c in reader.fieldnames if "@" in c]
        by_id: dict[int, SampleRecord] = {}
        for row in reader:
            sid = int(row["sample_id"])
            rec = by_id.get(sid)
            if rec is None:
                spec = SamplingSpec(Strategy(row["strategy"]), float(row["dropout_rate"]),
                                    int(row["seed"]), sid, int(row["retries"]))
                rec = by_id[sid] = SampleRecord(
                    sid, spec, CharacteristicsVector.from_mapping(row),
                    int(row["n_users"]), int(row["n_items"]), int(row["n_edges"]),
                )
            perf = {m: parse_float(row[m]) for m in metric_names}
            rec.performance[row["model"]] = {m: v for m, v in perf.items() if v is not None}
    return [by_id[k] for k in sorted(by_id)]


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    sample_ids: list[int]
    n_excluded: int
    column_means: np.ndarray
    column_sds: np.ndarray
    names: tuple[str, ...] = CHARACTERISTIC_NAMES

    def __iter__(self):
        # allows ``X, y = assemble_design(...)``
        return iter((self.X, self.y))


def _usable(r: SampleRecord, model_kind: str, metric: str) -> bool:
    return r.characteristics.complete and metric in r.performance.get(model_kind, {})


def assemble_design(records: Sequence[SampleRecord], model_kind: str, metric: str,
                    standardize: bool = True) -> Design:
    """Design matrix in fixed characteristic order plus target vector.

    Records missing an assortativity value (or the requested metric) are
    excluded and counted. With ``standardize`` every column is z-scored
    (population sd); the target stays raw.
    """
    used = [r for r in records if _usable(r, model_kind, metric)]
    n_excl = len(records) - len(used)
    if n_excl:
        log.info("%d of %d records excluded (missing assortativity or metric)", n_excl, len(records))
    C = len(CHARACTERISTIC_NAMES)
    if len(used) < C + 2:
        raise InsufficientSamples(
            f"need at least {C + 2} usable records for {C} characteristics, got {len(used)}"
        )
    X = np.array([r.characteristics.values() for r in used], dtype=np.float64)
    y = np.array([r.performance[model_kind][metric] for r in used], dtype=np.float64)
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    if standardize:
        safe = np.where(sds > 0, sds, 1.0)
        X = (X - means) / safe
        X[:, sds == 0] = 0.0
    return Design(X, y, [r.sample_id for r in used], n_excl, means, sds)


@dataclass(frozen=True)
class ExplainerConfig:
    standardize: bool = True
    thresholds: tuple[float, float, float] = (0.001, 0.01, 0.05)
    alphas: tuple[float, ...] = (0.0, 0.3, 0.7, 1.0)
    # records per alpha setting; None -> largest total both pools support
    alpha_total: Optional[int] = None
    # drop size-derived columns that are exact combinations of earlier ones
    drop_size_aliases: bool = True


def size_aliases(X: np.ndarray, names: Sequence[str] = CHARACTERISTIC_NAMES, tol: float = 1e-9) -> list[str]:
    """Size-derived columns that are affine combinations of earlier ones.

    Columns are scanned in design order; a column is aliased when its
    centered residual on the earlier kept size columns is below ``tol``
    relative to its centered norm.
    """
    Xc = X - X.mean(axis=0)
    kept: list[int] = []
    aliased = []
    for c, n in enumerate(names):
        if n not in SIZE_DERIVED:
            continue
        col = Xc[:, c]
        scale = np.linalg.norm(col)
        if scale == 0:
            continue
        if kept:
            B = Xc[:, kept]
            coef, *_ = np.linalg.lstsq(B, col, rcond=None)
            if np.linalg.norm(col - B @ coef) <= tol * scale:
                aliased.append(n)
                continue
        kept.append(c)
    return aliased


def significance_tier(p: float, thresholds: Sequence[float]) -> int:
    """3 for the strictest threshold, down to 0 for not significant."""
    if not np.isfinite(p):
        return 0
    return sum(1 for t in thresholds if p < t)


@dataclass
class RegressionReport:
    model_kind: str
    metric: str
    fit: OlsFit
    standardized_coefficients: dict[str, float]
    tiers: dict[str, int]
    correlation: np.ndarray
    n_samples_used: int
    n_samples_excluded: int
    standardized: bool
    thresholds: tuple[float, ...]
    aliased: tuple[str, ...] = ()

    @property
    def names(self) -> tuple[str, ...]:
        return self.fit.names

    def to_json(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "metric": self.metric,
            "standardized_features": self.standardized,
            "significance_thresholds": list(self.thresholds),
            "n_samples_used": self.n_samples_used,
            "n_samples_excluded": self.n_samples_excluded,
            "fit": self.fit.to_json(),
            "standardized_coefficients": self.standardized_coefficients,
            "significance_tiers": self.tiers,
            "aliased_characteristics": list(self.aliased),
            "correlation": {
                "names": list(CHARACTERISTIC_NAMES),
                "matrix": [[None if not np.isfinite(v) else float(v) for v in row] for row in self.correlation],
            },
        }

    def coefficient_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["characteristic", "coefficient", "standardized_coefficient", "p_value", "tier", "tier_label"])
        fitted = dict(zip(self.names, zip(self.fit.coefficients, self.fit.coefficient_p_values)))
        for n in CHARACTERISTIC_NAMES:
            if n not in fitted:
                w.writerow([n, "", "", "", "", "aliased" if n in self.aliased else ""])
                continue
            c, pv = fitted[n]
            t = self.tiers[n]
            w.writerow([n, repr(float(c)), repr(self.standardized_coefficients[n]), repr(float(pv)), t, TIER_LABELS[t]])
        return buf.getvalue()

    def write(self, json_path: str | Path, csv_path: str | Path) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        Path(csv_path).write_text(self.coefficient_csv(), encoding="utf-8")


def correlation_csv(matrix: np.ndarray, names: Sequence[str] = CHARACTERISTIC_NAMES) -> str:
    """Square matrix with a header row and a leading name column; NaN as empty."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *names])
    for n, row in zip(names, matrix):
        w.writerow([n, *("" if not np.isfinite(v) else repr(float(v)) for v in row)])
    return buf.getvalue()


def characteristic_correlation(records: Sequence[SampleRecord]) -> np.ndarray:
    rows = [r.characteristics.values() for r in records if r.characteristics.complete]
    if len(rows) < 2:
        raise InsufficientSamples("need at least two complete records for correlations")
    return pearson_matrix(np.array(rows, dtype=np.float64).T)


def explain(records: Sequence[SampleRecord], model_kind: str, metric: str,
            config: ExplainerConfig = ExplainerConfig()) -> RegressionReport:
    """Fit the explanatory OLS model for one (model, metric) pair.

    Size-derived aliases are dropped first (when enabled) and listed in the
    report; any remaining collinearity raises CollinearDesign.
    """
    design = assemble_design(records, model_kind, metric, config.standardize)
    aliased = size_aliases(design.X, design.names) if config.drop_size_aliases else []
    if aliased:
        log.info("dropping aliased size characteristics: %s", ", ".join(aliased))
    keep = [c for c, n in enumerate(design.names) if n not in aliased]
    names = tuple(design.names[c] for c in keep)
    fit = ols_fit(design.X[:, keep], design.y, names=names)
    if config.standardize:
        std = fit.coefficients.copy()
    else:
        std = fit.coefficients * design.column_sds[keep]
    p = fit.coefficient_p_values
    return RegressionReport(
        model_kind=model_kind,
        metric=metric,
        fit=fit,
        standardized_coefficients={n: float(v) for n, v in zip(names, std)},
        tiers={n: significance_tier(pv, config.thresholds) for n, pv in zip(names, p)},
        # correlations are scale-free, so z-scored and raw columns agree
        correlation=pearson_matrix(design.X.T),
        n_samples_used=len(design.sample_ids),
        n_samples_excluded=design.n_excluded,
        standardized=config.standardize,
        thresholds=tuple(config.thresholds),
        aliased=tuple(aliased),
    )


@dataclass
class AlphaMixResult:
    alpha: float
    report: RegressionReport
    n_node: int
    n_edge: int
    sample_ids: list[int]
    avg_users: float
    avg_items: float
    avg_edges: float

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "n_node_dropout": self.n_node,
            "n_edge_dropout": self.n_edge,
            "avg_users": self.avg_users,
            "avg_items": self.avg_items,
            "avg_edges": self.avg_edges,
            "adj_r_squared": self.report.fit.adj_r_squared,
            "significance_tiers": self.report.tiers,
            "sample_ids": self.sample_ids,
        }


def mix_counts(alpha: float, total: int) -> tuple[int, int]:
    """``(floor((1 - alpha) * total), ceil(alpha * total))`` without float drift."""
    n_node = floor_count(1.0 - alpha, total)
    return n_node, total - n_node


def alpha_mix_study(
    node_records: Sequence[SampleRecord],
    edge_records: Sequence[SampleRecord],
    alphas: Sequence[float],
    total_per_setting: int,
    model_kind: str,
    metric: str,
    rng: np.random.Generator,
    config: ExplainerConfig = ExplainerConfig(),
) -> list[AlphaMixResult]:
    """Refit the explanation on node/edge-dropout blends.

    For each alpha, ``floor((1-alpha)*total)`` node-dropout and
    ``ceil(alpha*total)`` edge-dropout records are drawn without
    replacement from the usable part of each pool.
    """
    node_pool = [r for r in node_records if _usable(r, model_kind, metric)]
    edge_pool = [r for r in edge_records if _usable(r, model_kind, metric)]
    out = []
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        n_node, n_edge = mix_counts(alpha, total_per_setting)
        if n_node > len(node_pool) or n_edge > len(edge_pool):
            raise InsufficientSamples(
                f"alpha={alpha}: need {n_node} node-dropout and {n_edge} edge-dropout records, "
                f"pools hold {len(node_pool)} and {len(edge_pool)}"
            )
        pick_n = rng.choice(len(node_pool), size=n_node, replace=False) if n_node else []
        pick_e = rng.choice(len(edge_pool), size=n_edge, replace=False) if n_edge else []
        chosen = [node_pool[i] for i in np.sort(pick_n)] + [edge_pool[i] for i in np.sort(pick_e)]
        report = explain(chosen, model_kind, metric, config)
        out.append(AlphaMixResult(
            alpha=float(alpha),
            report=report,
            n_node=n_node,
            n_edge=n_edge,
            sample_ids=[r.sample_id for r in chosen],
            avg_users=math.fsum(r.n_users for r in chosen) / len(chosen),
            avg_items=math.fsum(r.n_items for r in chosen) / len(chosen),
            avg_edges=math.fsum(r.n_edges for r in chosen) / len(chosen),
        ))
    return out
