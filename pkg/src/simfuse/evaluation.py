"""Binary classification metrics, ROC AUC, and the append-only results ledger."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import LengthMismatch, MalformedPredictions, SingleClassInput
from .fusion import PREDICTION_HEADER

METRIC_NAMES = ("auc", "accuracy", "specificity", "precision", "recall", "f_measure")
LEDGER_HEADER = ("target", "dt_method", "clustering", "k_clusters", "lambda", *METRIC_NAMES,
                 "n_test", "wall_clock_s")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _binary(xs, name: str) -> np.ndarray:
    a = np.asarray(xs)
    if a.ndim != 1 or not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be a flat sequence of 0/1")
    return a.astype(np.int8)


def confusion(preds: Sequence[int], truth: Sequence[int]) -> ConfusionCounts:
    p, t = _binary(preds, "preds"), _binary(truth, "truth")
    if len(p) != len(t):
        raise LengthMismatch(f"{len(p)} predictions vs {len(t)} labels")
    if len(p) == 0:
        raise LengthMismatch("need at least one prediction")
    return ConfusionCounts(int(((p == 1) & (t == 1)).sum()), int(((p == 1) & (t == 0)).sum()),
                           int(((p == 0) & (t == 1)).sum()), int(((p == 0) & (t == 0)).sum()))


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    specificity: float
    precision: float
    recall: float
    f_measure: float
    degenerate: frozenset = frozenset()  # names of metrics whose denominator was zero

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES[1:]}


def _ratio(num: float, den: float, name: str, flags: set) -> float:
    if den == 0:
        flags.add(name)
        return 0.0
    return num / den


def metrics(c: ConfusionCounts) -> Metrics:
    flags: set[str] = set()
    acc = _ratio(c.tp + c.tn, c.n, "accuracy", flags)
    spec = _ratio(c.tn, c.fp + c.tn, "specificity", flags)
    prec = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    rec = _ratio(c.tp, c.fn + c.tp, "recall", flags)
    f = _ratio(2 * prec * rec, prec + rec, "f_measure", flags)
    return Metrics(acc, spec, prec, rec, f, frozenset(flags))


def auc(scores: Sequence[float], truth: Sequence[int]) -> float:
    """Mann-Whitney U / (n_pos * n_neg); tied scores earn half credit."""
    s = np.asarray(scores, dtype=np.float64)
    t = _binary(truth, "truth")
    if s.shape != t.shape:
        raise LengthMismatch(f"{len(s)} scores vs {len(t)} labels")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    n_pos = int(t.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput(f"AUC needs both classes (pos={n_pos}, neg={n_neg})")
    ranks = rankdata(s)  # average ranks give the 0.5 tie credit
    u = ranks[t == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalReport:
    target: str
    dt_method: str
    clustering: str
    k_clusters: int | None
    lam: int
    counts: ConfusionCounts
    auc: float
    metrics: Metrics
    n_test: int
    auc_degenerate: bool = False
    wall_clock_s: float = field(default=0.0, compare=False)

    @property
    def f_measure(self) -> float:
        return self.metrics.f_measure

    def as_row(self) -> dict:
        return {"target": self.target, "dt_method": self.dt_method, "clustering": self.clustering,
                "k_clusters": "" if self.k_clusters is None else self.k_clusters, "lambda": self.lam,
                "auc": self.auc, **self.metrics.as_dict(), "n_test": self.n_test,
                "wall_clock_s": round(self.wall_clock_s, 6)}


def append_ledger(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, LEDGER_HEADER, lineterminator="\n")
        if fresh:
            w.writeheader()
        w.writerow(report.as_row())
        fh.flush()
        os.fsync(fh.fileno())


def read_predictions(path: str | Path) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise MalformedPredictions(f"{path}: {exc}") from None
    if not rows or tuple(rows[0]) != PREDICTION_HEADER:
        raise MalformedPredictions(f"{path}: header must be {','.join(PREDICTION_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(PREDICTION_HEADER):
            raise MalformedPredictions(f"{path}:{lineno}: expected {len(PREDICTION_HEADER)} fields")
        rec = dict(zip(PREDICTION_HEADER, row))
        try:
            rec["predicted"] = int(rec["predicted"])
            rec["true_label"] = int(rec["true_label"])
            rec["score"] = float(rec["score"])
            rec["votes_pos"] = int(rec["votes_pos"])
            rec["votes_neg"] = int(rec["votes_neg"])
        except ValueError as exc:
            raise MalformedPredictions(f"{path}:{lineno}: {exc}") from None
        if rec["predicted"] not in (0, 1) or rec["true_label"] not in (0, 1):
            raise MalformedPredictions(f"{path}:{lineno}: labels must be 0/1")
        if not (0.0 <= rec["score"] <= 1.0) or math.isnan(rec["score"]):
            raise MalformedPredictions(f"{path}:{lineno}: score outside [0, 1]")
        out.append(rec)
    if not out:
        raise MalformedPredictions(f"{path}: no predictions")
    return out


def evaluate_run(predictions_csv: str | Path, config: Mapping, ledger_path: str | Path | None = None,
                 wall_clock_s: float = 0.0) -> EvalReport:
    """Score a predictions file; *config* supplies the descriptor columns.

    A single-class test set has no defined AUC; it is reported as 0.5 with
    ``auc_degenerate`` set.
    """
    report = build_report(read_predictions(predictions_csv), config, wall_clock_s)
    if ledger_path is not None:
        append_ledger(report, ledger_path)
    return report


def build_report(rows: Sequence[Mapping], config: Mapping, wall_clock_s: float = 0.0) -> EvalReport:
    """Report for prediction rows shaped like the predictions CSV."""
    preds = [r["predicted"] for r in rows]
    truth = [r["true_label"] for r in rows]
    scores = [r["score"] for r in rows]
    c = confusion(preds, truth)
    try:
        a, degenerate = auc(scores, truth), False
    except SingleClassInput:
        a, degenerate = 0.5, True
    report = EvalReport(
        target=str(config.get("target", rows[0]["target"])),
        dt_method=str(config.get("dt_method", "")),
        clustering=str(config.get("clustering", "")),
        k_clusters=config.get("k_clusters"),
        lam=int(config.get("lambda", config.get("lam", 1))),
        counts=c, auc=a, metrics=metrics(c), n_test=len(rows),
        auc_degenerate=degenerate, wall_clock_s=wall_clock_s,
    )
    return report
