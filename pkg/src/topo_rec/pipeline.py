"""Resumable end-to-end orchestration over an output directory.

Layout under ``config.output``::

    manifest.jsonl                       append-only progress log
    dataset/graph.tsv                    largest component of the seed data
    samples/<dataset>/<id>/graph.tsv     sampled sub-dataset
                           spec.json     sampling provenance and sizes
                           characteristics.csv
                           train.tsv val.tsv test.tsv
                           models/<model>/{embeddings.npz,manifest.json,trace.csv,metrics.json}
    records.csv                          one row per sample per model
    reports/<model>_<metric>.json|.csv
    correlation.csv
    alpha_mix/summary.csv, alpha_mix/<model>_<metric>_alpha<a>.json|.csv
    degree_fit.csv, degree_fit.json
"""

from __future__ import annotations

import csv
import json
import logging
import os
import threading
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .characteristics import CharacteristicsVector, compute_all
from .config import PipelineConfig
from .errors import InsufficientSamples, ManifestError, PipelineAborted, TopoRecError
from .evaluation import split
from .explainer import (
    SampleRecord,
    alpha_mix_study,
    characteristic_correlation,
    correlation_csv,
    explain,
    mix_counts,
    read_records,
    write_records,
)
from .graph import BipartiteGraph, largest_connected_component, read_graph, write_edges, write_graph
from .models.training import save_trained, train
from .numerics import fit_degree_distribution
from .sampler import SamplingSpec, Strategy, assign_strategies, derive_seed, draw_sample

log = logging.getLogger(__name__)

FAILURE_LIMIT = 0.10
STAGES = ("ingest", "sample", "characterize", "train", "explain", "alpha-mix", "degree-fit")

# seed-stream tags beyond the sampler's own (1-3)
_SPLIT_TAG = 4
_TRAIN_TAG = 5
_ALPHA_TAG = 6


def configure_logging() -> None:
    level = os.environ.get("TOPO_REC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------- manifest

class Manifest:
    """Append-only JSON-lines log of completed work.

    The first line pins the config hash; later lines mark stage completion
    and per-sample progress. Writes are serialized by a lock.
    """

    FILE = "manifest.jsonl"

    def __init__(self, root: Path, config_hash: str):
        self.path = root / self.FILE
        self.config_hash = config_hash
        self._lock = threading.Lock()
        self.stages: set[str] = set()
        self.sample_status: dict[int, set[str]] = {}
        self.failed: dict[int, str] = {}
        root.mkdir(parents=True, exist_ok=True)
        if self.path.exists() and self.path.stat().st_size > 0:
            self._load()
        else:
            self._append({"event": "config", "config_hash": config_hash})

    def _recovery(self) -> str:
        return (f"Recovery: delete {self.path} to rebuild progress from scratch "
                f"(completed artifacts will be recomputed), or point --output at a fresh directory.")

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        entries = []
        for n, line in enumerate(lines, 1):
            try:
                entry = json.loads(line)
            except json.JSONDecodeError:
                raise ManifestError(f"{self.path}: line {n} is not valid JSON. {self._recovery()}") from None
            if not isinstance(entry, dict) or "event" not in entry:
                raise ManifestError(f"{self.path}: line {n} has no event field. {self._recovery()}")
            entries.append(entry)
        if entries[0].get("event") != "config" or "config_hash" not in entries[0]:
            raise ManifestError(f"{self.path}: first line must record the config hash. {self._recovery()}")
        if entries[0]["config_hash"] != self.config_hash:
            raise ManifestError(
                f"{self.path} was written by a different configuration "
                f"({entries[0]['config_hash'][:12]} != {self.config_hash[:12]}). {self._recovery()}"
            )
        for e in entries[1:]:
            if e["event"] == "stage":
                self.stages.add(e["stage"])
            elif e["event"] == "sample":
                sid = int(e["sample_id"])
                if e["status"] == "failed":
                    self.failed[sid] = e.get("error", "")
                else:
                    self.sample_status.setdefault(sid, set()).add(e["status"])
                    self.failed.pop(sid, None)

    def _append(self, entry: dict) -> None:
        entry = {**entry, "time": time.strftime("%Y-%m-%dT%H:%M:%S")}
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def has(self, sid: int, status: str) -> bool:
        return status in self.sample_status.get(sid, ())

    def mark(self, sid: int, status: str, **extra) -> None:
        self._append({"event": "sample", "sample_id": sid, "status": status, **extra})
        if status == "failed":
            self.failed[sid] = extra.get("error", "")
        else:
            self.sample_status.setdefault(sid, set()).add(status)

    def stage_done(self, stage: str) -> None:
        self._append({"event": "stage", "stage": stage})
        self.stages.add(stage)


# ------------------------------------------------------------------ layout

@dataclass(frozen=True)
class Layout:
    root: Path
    dataset: str

    @property
    def dataset_graph(self) -> Path:
        return self.root / "dataset" / "graph.tsv"

    def sample_dir(self, sid: int) -> Path:
        return self.root / "samples" / self.dataset / f"{sid:04d}"

    def model_dir(self, sid: int, model: str) -> Path:
        return self.sample_dir(sid) / "models" / model

    @property
    def records(self) -> Path:
        return self.root / "records.csv"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def alpha_mix(self) -> Path:
        return self.root / "alpha_mix"


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


# ------------------------------------------------------- per-sample workers

@lru_cache(maxsize=4)
def _cached_graph(path: str) -> BipartiteGraph:
    return read_graph(path)


def _init_worker() -> None:
    threadpool_limits(1)


def _sample_task(config: PipelineConfig, sid: int, strategy: Strategy) -> dict:
    layout = Layout(config.output_dir, config.dataset.name)
    graph = _cached_graph(str(layout.dataset_graph))
    spec, sub = draw_sample(graph, config.generation, sid, strategy)
    d = layout.sample_dir(sid)
    d.mkdir(parents=True, exist_ok=True)
    write_graph(sub, d / "graph.tsv")
    _write_json(d / "spec.json", {**spec.to_json(), "n_users": sub.user_count,
                                  "n_items": sub.item_count, "n_edges": sub.edge_count})
    return {"retries": spec.retries}


def _characterize_task(config: PipelineConfig, sid: int) -> dict:
    d = Layout(config.output_dir, config.dataset.name).sample_dir(sid)
    cv = compute_all(read_graph(d / "graph.tsv"))
    (d / "characteristics.csv").write_text(cv.to_csv(), encoding="utf-8")
    return {}


def _model_seed(master: int, sid: int, model: str) -> int:
    return derive_seed(master, sid, _TRAIN_TAG, zlib.crc32(model.encode("ascii")))


def _train_task(config: PipelineConfig, sid: int, models: tuple[str, ...]) -> dict:
    layout = Layout(config.output_dir, config.dataset.name)
    d = layout.sample_dir(sid)
    graph = read_graph(d / "graph.tsv")
    rng = np.random.default_rng(derive_seed(config.seed, sid, _SPLIT_TAG))
    parts = split(graph, rng, config.split.test_ratio, config.split.val_ratio)
    write_edges(graph, parts.train, d / "train.tsv")
    write_edges(graph, parts.validation, d / "val.tsv")
    write_edges(graph, parts.test, d / "test.tsv")
    out = {}
    for m in models:
        tc = replace(config.models[m], seed=_model_seed(config.seed, sid, m))
        trained = train(m, parts, tc)
        scores = trained.evaluate(parts, config.metrics.k)
        md = layout.model_dir(sid, m)
        save_trained(trained, md)
        metrics = {f"{n}@{config.metrics.k}": scores[n] for n in config.metrics.names}
        _write_json(md / "metrics.json", metrics)
        out[m] = {"epochs": trained.epochs_run, "best_epoch": trained.best_epoch}
    return out


def _guarded(fn: Callable, *args) -> tuple[bool, object]:
    try:
        with threadpool_limits(1):
            return True, fn(*args)
    except (TopoRecError, ArithmeticError, ValueError) as exc:
        return False, f"{type(exc).__name__}: {exc}"


def _guarded_star(args):
    return _guarded(*args)


def _map(tasks: list[tuple], workers: int) -> list[tuple[bool, object]]:
    """Run ``(fn, *args)`` tasks; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [_guarded(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
        return list(pool.map(_guarded_star, tasks))


# ------------------------------------------------------------------- stages

@dataclass
class Pipeline:
    config: PipelineConfig
    manifest: Manifest = field(init=False)
    layout: Layout = field(init=False)

    def __post_init__(self):
        self.config.validate_paths()
        self.layout = Layout(self.config.output_dir, self.config.dataset.name)
        self.manifest = Manifest(self.layout.root, self.config.config_hash())

    @property
    def sample_ids(self) -> range:
        return range(self.config.generation.sample_count)

    def _check_failures(self, stage: str) -> None:
        M = self.config.generation.sample_count
        n_fail = len(self.manifest.failed)
        if n_fail > FAILURE_LIMIT * M:
            raise PipelineAborted(
                f"{stage}: {n_fail} of {M} samples failed (limit {FAILURE_LIMIT:.0%}); "
                f"see {self.manifest.path} for per-sample errors"
            )

    def _live(self, status: str) -> list[int]:
        return [s for s in self.sample_ids if self.manifest.has(s, status) and s not in self.manifest.failed]

    def _dispatch(self, stage: str, status: str, todo: list[int], make_task: Callable[[int], tuple]) -> None:
        if todo:
            log.info("%s: %d samples to process", stage, len(todo))
        results = _map([make_task(s) for s in todo], self.config.workers)
        for sid, (ok, payload) in zip(todo, results):
            if ok:
                self.manifest.mark(sid, status, **(payload or {}))
            else:
                log.warning("%s: sample %d failed: %s", stage, sid, payload)
                self.manifest.mark(sid, "failed", stage=stage, error=str(payload))
        self._check_failures(stage)
        self.manifest.stage_done(stage)

    # stage 0
    def ingest(self) -> BipartiteGraph:
        path = self.layout.dataset_graph
        if "ingest" in self.manifest.stages and path.exists():
            return read_graph(path)
        raw = read_graph(self.config.dataset_path)
        g = largest_connected_component(raw)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_graph(g, path)
        _write_json(path.parent / "summary.json", {
            "source": str(self.config.dataset_path),
            "raw": {"n_users": raw.user_count, "n_items": raw.item_count, "n_edges": raw.edge_count},
            "component": {"n_users": g.user_count, "n_items": g.item_count, "n_edges": g.edge_count},
        })
        log.info("ingested %s: %r -> %r", self.config.dataset.name, raw, g)
        self.manifest.stage_done("ingest")
        return g

    # stage 1
    def sample(self) -> None:
        self.ingest()
        strategies = assign_strategies(self.config.generation)
        todo = [s for s in self.sample_ids if not self._done(s, "generated", "graph.tsv")]
        self._dispatch("sample", "generated", todo, lambda s: (_sample_task, self.config, s, strategies[s]))

    def _done(self, sid: int, status: str, artifact: str) -> bool:
        if sid in self.manifest.failed:
            return True
        return self.manifest.has(sid, status) and (self.layout.sample_dir(sid) / artifact).exists()

    # stage 2
    def characterize(self) -> None:
        if "sample" not in self.manifest.stages:
            self.sample()
        todo = [s for s in self._live("generated") if not self._done(s, "characterized", "characteristics.csv")]
        self._dispatch("characterize", "characterized", todo, lambda s: (_characterize_task, self.config, s))

    # stage 3
    def train(self) -> None:
        if "characterize" not in self.manifest.stages:
            self.characterize()
        models = tuple(sorted(self.config.models))
        todo = []
        for s in self._live("characterized"):
            if not all(self.manifest.has(s, f"trained:{m}") and
                       (self.layout.model_dir(s, m) / "metrics.json").exists() for m in models):
                todo.append(s)
        if todo:
            log.info("train: %d samples to process", len(todo))
        results = _map([(_train_task, self.config, s, models) for s in todo], self.config.workers)
        for sid, (ok, payload) in zip(todo, results):
            if ok:
                for m in models:
                    self.manifest.mark(sid, f"trained:{m}", **payload[m])
                    self.manifest.mark(sid, f"evaluated:{m}")
            else:
                log.warning("train: sample %d failed: %s", sid, payload)
                self.manifest.mark(sid, "failed", stage="train", error=str(payload))
        self._check_failures("train")
        self.write_records()
        self.manifest.stage_done("train")

    def collect_records(self) -> list[SampleRecord]:
        models = sorted(self.config.models)
        out = []
        for s in self._live("characterized"):
            if not all(self.manifest.has(s, f"trained:{m}") for m in models):
                continue
            d = self.layout.sample_dir(s)
            meta = _read_json(d / "spec.json")
            with open(d / "characteristics.csv", newline="", encoding="utf-8") as fh:
                cv = CharacteristicsVector.from_mapping(next(csv.DictReader(fh)))
            perf = {m: _read_json(self.layout.model_dir(s, m) / "metrics.json") for m in models}
            out.append(SampleRecord(s, SamplingSpec.from_json(meta), cv,
                                    meta["n_users"], meta["n_items"], meta["n_edges"], perf))
        return out

    def write_records(self) -> Path:
        write_records(self.collect_records(), self.layout.records, self.config.metrics.columns)
        return self.layout.records

    def records(self) -> list[SampleRecord]:
        if not self.layout.records.exists():
            self.train()
        return read_records(self.layout.records)

    # stage 4
    def explain(self, strict: bool = True) -> dict[str, dict]:
        """Fit every (model, metric) report; with ``strict=False`` an
        InsufficientSamples condition is written as a status report instead
        of raised."""
        records = self.records()
        reports = self.layout.reports
        reports.mkdir(parents=True, exist_ok=True)
        status = {}
        for m in sorted(self.config.models):
            for metric in self.config.metrics.columns:
                stem = f"{m}_{metric.replace('@', '')}"
                try:
                    rep = explain(records, m, metric, self.config.explainer)
                except InsufficientSamples as exc:
                    if strict:
                        raise
                    _write_json(reports / f"{stem}.json", {"status": "insufficient_samples",
                                                           "model_kind": m, "metric": metric,
                                                           "n_records": len(records), "message": str(exc)})
                    (reports / f"{stem}.csv").write_text(
                        "characteristic,coefficient,standardized_coefficient,p_value,tier,tier_label\n",
                        encoding="utf-8")
                    status[stem] = {"status": "insufficient_samples"}
                    continue
                rep.write(reports / f"{stem}.json", reports / f"{stem}.csv")
                status[stem] = {"status": "ok", "adj_r_squared": rep.fit.adj_r_squared}
        complete = [r for r in records if r.characteristics.complete]
        if len(complete) >= 2:
            corr = characteristic_correlation(records)
            (self.layout.root / "correlation.csv").write_text(correlation_csv(corr), encoding="utf-8")
        elif strict:
            raise InsufficientSamples("need at least two complete records for the correlation matrix")
        self.manifest.stage_done("explain")
        return status

    # node/edge-dropout composition study
    def alpha_mix(self, strict: bool = True) -> list[dict]:
        records = self.records()
        node = [r for r in records if r.spec.strategy is Strategy.NODE]
        edge = [r for r in records if r.spec.strategy is Strategy.EDGE]
        alphas = self.config.explainer.alphas
        out_dir = self.layout.alpha_mix
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        try:
            for m in sorted(self.config.models):
                for metric in self.config.metrics.columns:
                    usable_n = [r for r in node if r.characteristics.complete and metric in r.performance.get(m, {})]
                    usable_e = [r for r in edge if r.characteristics.complete and metric in r.performance.get(m, {})]
                    total = self.config.explainer.alpha_total or max_mix_total(len(usable_n), len(usable_e), alphas)
                    rng = np.random.default_rng(derive_seed(self.config.seed, _ALPHA_TAG))
                    results = alpha_mix_study(node, edge, alphas, total, m, metric, rng, self.config.explainer)
                    stem = f"{m}_{metric.replace('@', '')}"
                    for res in results:
                        tag = f"{stem}_alpha{res.alpha:g}"
                        res.report.write(out_dir / f"{tag}.json", out_dir / f"{tag}.csv")
                        rows.append({"model": m, "metric": metric, **res.summary()})
        except InsufficientSamples as exc:
            if strict:
                raise
            _write_json(out_dir / "status.json", {"status": "insufficient_samples", "message": str(exc),
                                                  "n_node_records": len(node), "n_edge_records": len(edge)})
            rows = []
        _write_alpha_summary(out_dir / "summary.csv", rows)
        self.manifest.stage_done("alpha-mix")
        return rows

    # plot-ready degree distributions
    def degree_fit(self, strict: bool = True) -> dict:
        g = self.ingest()
        result = degree_fit_tables(g, strict=strict)
        write_degree_fit(result, self.layout.root / "degree_fit.csv", self.layout.root / "degree_fit.json")
        self.manifest.stage_done("degree-fit")
        return result["summary"]

    def run(self) -> Path:
        self.ingest()
        self.sample()
        self.characterize()
        self.train()
        self.explain(strict=False)
        self.alpha_mix(strict=False)
        self.degree_fit(strict=False)
        return self.layout.root


def max_mix_total(n_node: int, n_edge: int, alphas) -> int:
    """Largest per-setting total that both pools can serve for every alpha."""
    for total in range(n_node + n_edge, 0, -1):
        if all(a <= n_node and b <= n_edge for a, b in (mix_counts(al, total) for al in alphas)):
            return total
    return 0


def _write_alpha_summary(path: Path, rows: list[dict]) -> None:
    cols = ["model", "metric", "alpha", "n_node_dropout", "n_edge_dropout",
            "avg_users", "avg_items", "avg_edges", "adj_r_squared"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else repr(r[c]) for c in cols])


def degree_fit_tables(graph: BipartiteGraph, strict: bool = True) -> dict:
    rows, summary = [], {}
    for side in ("user", "item"):
        try:
            fit = fit_degree_distribution(graph.degrees(side))
        except TopoRecError as exc:
            if strict:
                raise
            summary[side] = {"status": type(exc).__name__, "message": str(exc)}
            continue
        pl, ex = fit.power_law(fit.degrees), fit.exponential(fit.degrees)
        for d, p, a, b in zip(fit.degrees.tolist(), fit.probabilities.tolist(), pl.tolist(), ex.tolist()):
            rows.append([side, d, p, a, b])
        summary[side] = {
            "status": "ok",
            "power_law_exponent": fit.power_law_exponent,
            "power_law_log10_scale": fit.power_law_log10_scale,
            "power_law_residual": fit.power_law_residual,
            "exponential_rate": fit.exponential_rate,
            "exponential_log10_scale": fit.exponential_log10_scale,
            "exponential_residual": fit.exponential_residual,
            "preferred": fit.preferred,
        }
    return {"rows": rows, "summary": summary}


def write_degree_fit(result: dict, csv_path: Path, json_path: Path) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["side", "degree", "probability", "power_law_fit", "exponential_fit"])
        for side, d, p, a, b in result["rows"]:
            w.writerow([side, d, repr(p), repr(a), repr(b)])
    _write_json(json_path, result["summary"])


def run_pipeline(config: PipelineConfig) -> Path:
    return Pipeline(config).run()
