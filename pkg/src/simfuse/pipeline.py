"""End-to-end runs: split, transform, cluster, distances, fusion, evaluation.

Every run writes its artifacts to ``<root>/<run key>/`` where the key hashes
the configuration together with the input cohort fingerprint, so repeating a
run is a cache hit unless forced.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import cluster as cl
from .distengine import plan_job, run_distributed, run_local, serve_job
from .dtw import DtwConfig, VariateDistanceBlock, write_blocks_csv
from .errors import InvalidParameter, PipelineError
from .evaluation import METRIC_NAMES, EvalReport, append_ledger, build_report, evaluate_run
from .fusion import NeighborhoodFusion, Prediction, fuse, vote, write_predictions
from .model import LABELS, Cohort, generate_synthetic_cohort, load_cohort_dir, split_cohort, \
    truncate_observation_window
from .transform import METHODS, fit_transform, apply_transform

log = logging.getLogger(__name__)

DEFAULT_K = {"cad": 125, "chf": 150}
RUN_DIR_ENV = "SIMFUSE_RUN_DIR"
SWEEP_AXES = ("k_clusters", "observation_hours", "workers")


def run_root(root: str | Path | None = None) -> Path:
    return Path(root if root is not None else os.environ.get(RUN_DIR_ENV, "runs"))


@dataclass(frozen=True)
class RunConfig:
    target: str = "cad"
    dt_method: str = "awoe"
    clustering: str = "kmeans"
    k_clusters: int | None = None  # None: 125 for cad, 150 for chf
    lam: int = 1
    band: int | None = None
    q: int = 20
    epsilon: float = 1e-4
    unique_threshold: int = 100
    seed: int = 0
    test_fraction: float = 0.2
    observation_hours: float | None = None
    workers: int = 1
    endpoints: tuple[str, ...] = ()
    listen: str | None = None
    block_size: int = 25
    timeout_s: float = 60.0
    min_samples: int = 5
    eps_extract: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        self.validate()

    @property
    def k(self) -> int:
        return self.k_clusters if self.k_clusters is not None else DEFAULT_K[self.target]

    def validate(self) -> None:
        def need(ok: bool, msg: str) -> None:
            if not ok:
                raise InvalidParameter(msg)

        need(self.target in LABELS, f"target must be one of {LABELS}, got {self.target!r}")
        need(self.dt_method in METHODS, f"dt_method must be one of {METHODS}, got {self.dt_method!r}")
        need(self.clustering in cl.ALGORITHMS, f"clustering must be one of {cl.ALGORITHMS}, got {self.clustering!r}")
        need(self.k_clusters is None or self.k_clusters >= 1, "k_clusters must be >= 1")
        need(self.lam >= 1, "lambda must be >= 1")
        need(self.band is None or self.band >= 0, "band must be >= 0")
        need(self.q >= 1, "q must be >= 1")
        need(self.epsilon > 0, "epsilon must be > 0")
        need(self.unique_threshold >= 1, "unique_threshold must be >= 1")
        need(0.0 < self.test_fraction < 1.0, "test_fraction must be in (0, 1)")
        need(self.observation_hours is None or self.observation_hours > 0, "observation_hours must be > 0")
        need(self.workers >= 1, "workers must be >= 1")
        need(not (self.endpoints and self.listen), "give either endpoints or listen, not both")
        need(self.block_size >= 1, "block_size must be >= 1")
        need(self.timeout_s > 0, "timeout_s must be > 0")
        need(self.min_samples >= 2, "min_samples must be >= 2")
        need(self.eps_extract is None or self.eps_extract > 0, "eps_extract must be > 0")
        need(self.gamma is None or self.gamma > 0, "gamma must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["endpoints"] = list(self.endpoints)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidParameter(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def descriptor(self) -> dict:
        return {"target": self.target, "dt_method": self.dt_method, "clustering": self.clustering,
                "k_clusters": self.k if self.clustering != "optics" else None, "lambda": self.lam}


def run_key(cfg: RunConfig, cohort_fingerprint: str) -> str:
    payload = json.dumps({"config": cfg.to_dict(), "cohort": cohort_fingerprint}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class PipelineResult:
    report: EvalReport
    run_dir: Path | None
    reused: bool = False
    predictions: dict[str, Prediction] = field(default_factory=dict)
    fusions: dict[str, NeighborhoodFusion] = field(default_factory=dict)
    blocks: list[VariateDistanceBlock] = field(default_factory=list)


class _Stage:
    """Context manager that re-raises failures as PipelineError(stage)."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, Exception):
            raise PipelineError(self.name, exc) from exc
        return False


def _load(cohort: Cohort | str | Path) -> Cohort:
    return cohort if isinstance(cohort, Cohort) else load_cohort_dir(cohort)


def _read_report_wall_clock(path: Path) -> float:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return float(rows[-1]["wall_clock_s"]) if rows else 0.0


def execute(cfg: RunConfig, cohort: Cohort | str | Path, root: str | Path | None = None,
            force: bool = False, write: bool = True, ledger: bool = True) -> PipelineResult:
    """Run one configuration end to end.

    With ``write=False`` nothing touches disk and caching is bypassed.
    """
    with _Stage("load"):
        cfg.validate()
        base = _load(cohort)
    run_dir = None
    if write:
        run_dir = run_root(root) / run_key(cfg, base.fingerprint)
        report_path = run_dir / "report.csv"
        if report_path.exists() and not force:
            log.info("run %s already complete; reusing", run_dir.name)
            with _Stage("eval"):
                report = evaluate_run(run_dir / "predictions.csv", cfg.descriptor(),
                                      wall_clock_s=_read_report_wall_clock(report_path))
            return PipelineResult(report, run_dir, reused=True)
        if run_dir.exists():
            shutil.rmtree(run_dir)
        run_dir.mkdir(parents=True)
        (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")

    started = time.perf_counter()
    with _Stage("split"):
        c = base
        if cfg.observation_hours is not None:
            c = truncate_observation_window(c, cfg.observation_hours)
        c = split_cohort(c, cfg.test_fraction, cfg.seed)
        train, test = c.split.train_ids, c.split.test_ids
        train_labels = c.labels(cfg.target, train)
        truth = c.labels(cfg.target, test)

    with _Stage("transform"):
        fitted = fit_transform(c, cfg.dt_method, cfg.target, cfg.epsilon, cfg.unique_threshold, cfg.q)
        tc = apply_transform(c, fitted)
        if run_dir is not None and cfg.dt_method == "awoe":
            fitted.write(run_dir / "binning.json")

    with _Stage("cluster"):
        assignment = cl.cluster_points(cfg.clustering, tc.static_matrix(), tc.ids, k=cfg.k, seed=cfg.seed,
                                       gamma=cfg.gamma, min_samples=cfg.min_samples,
                                       eps_extract=cfg.eps_extract)
        if run_dir is not None:
            assignment.to_csv(run_dir / "clusters.csv")

    with _Stage("distances"):
        variates = c.variates()
        manifest = plan_job(c, variates, list(test), assignment, cfg.block_size, DtwConfig(band=cfg.band),
                            pool=train)
        if run_dir is not None:
            manifest.save(run_dir / "job.json")
        if cfg.endpoints:
            blocks = run_distributed(manifest, None, cfg.endpoints, timeout_s=cfg.timeout_s)
        elif cfg.listen:
            blocks = serve_job(manifest, cfg.listen, timeout_s=cfg.timeout_s)
        else:
            blocks = run_local(manifest, c, cfg.workers)
        if run_dir is not None:
            write_blocks_csv(blocks, run_dir / "distances.csv")

    with _Stage("fusion"):
        fusions = {pid: fuse(blocks, pid, cfg.lam, train_labels) for pid in test}
        preds = {pid: vote(f, train_labels) for pid, f in fusions.items()}

    elapsed = time.perf_counter() - started
    with _Stage("eval"):
        if run_dir is not None:
            write_predictions(list(preds.values()), cfg.target, truth, run_dir / "predictions.csv")
            report = evaluate_run(run_dir / "predictions.csv", cfg.descriptor(), run_dir / "report.csv",
                                  wall_clock_s=elapsed)
            if ledger:
                append_ledger(report, run_root(root) / "ledger.csv")
        else:
            report = _report_in_memory(cfg, preds, truth, elapsed)
    return PipelineResult(report, run_dir, False, preds, fusions, blocks)


def _report_in_memory(cfg: RunConfig, preds: Mapping[str, Prediction], truth: Mapping[str, int],
                      elapsed: float) -> EvalReport:
    rows = [{"target": cfg.target, "predicted": p.predicted, "score": p.score, "true_label": truth[pid]}
            for pid, p in preds.items()]
    return build_report(rows, cfg.descriptor(), elapsed)


def run_pipeline(cfg: RunConfig, cohort: Cohort | str | Path, root: str | Path | None = None,
                 force: bool = False) -> EvalReport:
    return execute(cfg, cohort, root, force).report


# ---------------------------------------------------------------- sweeps


SWEEP_HEADER = ("axis", "value", "repeats", *METRIC_NAMES, "wall_clock_s", "error")


def sweep(cfg: RunConfig, axis: str, values: Sequence, cohort: Cohort | str | Path,
          repeats: int = 1, root: str | Path | None = None, force: bool = False) -> list[dict]:
    """One run per value (metrics averaged over *repeats* seeds); writes ``sweep_<axis>.csv``.

    A failing value is recorded with its error and the sweep carries on.
    """
    if axis not in SWEEP_AXES:
        raise InvalidParameter(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    if len(values) < 2:
        raise InvalidParameter("a sweep needs at least two values")
    if repeats < 1:
        raise InvalidParameter("repeats must be >= 1")
    base = _load(cohort)
    rows = []
    for value in values:
        row: dict[str, Any] = {"axis": axis, "value": value, "repeats": repeats, "error": ""}
        try:
            reports = [
                execute(replace(cfg, **{axis: value}, seed=cfg.seed + r), base, root, force).report
                for r in range(repeats)
            ]
        except (PipelineError, InvalidParameter) as exc:
            log.warning("sweep %s=%s failed: %s", axis, value, exc)
            row.update({m: "" for m in METRIC_NAMES}, wall_clock_s="", error=str(exc))
        else:
            for m in METRIC_NAMES:
                vals = [r.auc if m == "auc" else getattr(r.metrics, m) for r in reports]
                row[m] = sum(vals) / len(vals)
            row["wall_clock_s"] = sum(r.wall_clock_s for r in reports) / len(reports)
        rows.append(row)
    out = run_root(root)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"sweep_{axis}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, SWEEP_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


# ---------------------------------------------------------------- benchmark


BENCH_HEADER = ("n", "len", "workers", "seconds")


def bench_dtw(n_patients: int, series_len: int, workers: int | Sequence[int] = 1, variates: int = 1,
              seed: int = 0, repeats: int = 1, out: str | Path | None = None,
              executor: str | None = None) -> list[dict]:
    """Time the full pairwise DTW phase (every patient against every other).

    One row per worker count; ``seconds`` is the best of *repeats*.
    """
    counts = [workers] if isinstance(workers, int) else list(workers)
    if n_patients < 2 or series_len < 2 or variates < 1 or repeats < 1 or not counts or min(counts) < 1:
        raise InvalidParameter("bench needs n_patients >= 2, series_len >= 2 and counts >= 1")
    c = generate_synthetic_cohort(n_patients, variates, series_len, 1.0, seed=seed,
                                  missing_fraction=0.0)
    ids = list(c.ids)
    one_cluster = cl.ClusterAssignment("single", {}, {pid: 0 for pid in ids}, ())
    manifest = plan_job(c, c.variates(), ids, one_cluster, block_size=max(1, len(ids) // 32))
    rows = []
    for w in counts:
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            run_local(manifest, c, w, executor)
            best = min(best, time.perf_counter() - t0)
        rows.append({"n": n_patients, "len": series_len, "workers": w, "seconds": best})
    if out is not None:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, BENCH_HEADER, lineterminator="\n")
            wr.writeheader()
            wr.writerows(rows)
    return rows
