"""Static-feature transforms fitted on the training split: adaptive WoE and Z-score.

Adaptive weight-of-evidence replaces every raw value by the log ratio of the
positive- and negative-event shares of the bin it falls in::

    awoe(b) = ln( (pos_b / POS + eps) / (neg_b / NEG + eps) )

A feature with at most ``unique_threshold`` distinct training values gets one
bin per value; otherwise ``max(2, floor(n_train / q))`` equal-frequency bins.
Because the output only depends on the bin, all raw values sharing a bin are
indistinguishable after the transform.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateFeature, InvalidParameter, NoNegativeEvents, NoPositiveEvents, TransformError
from .model import NUMERIC, Cohort, PatientRecord, StaticFeature

PER_UNIQUE = "per-unique-value"
EQUAL_FREQUENCY = "equal-frequency"
METHODS = ("awoe", "zscore", "none")


@dataclass(frozen=True)
class AwoeBinning:
    feature: str
    mode: str
    edges: tuple[float, ...]  # inner cut points; bin i covers (edges[i-1], edges[i]]
    bin_awoe: tuple[float, ...]
    epsilon: float = 1e-4
    unique_threshold: int = 100
    q: int = 20

    @property
    def n_bins(self) -> int:
        return len(self.bin_awoe)

    def bin_of(self, value) -> np.ndarray | int:
        """Index of the bin containing *value*; values outside the training range clamp."""
        return np.searchsorted(np.asarray(self.edges, dtype=np.float64), value, side="left")

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "mode": self.mode,
            "edges": list(self.edges),
            "awoe": list(self.bin_awoe),
            "epsilon": self.epsilon,
            "unique_threshold": self.unique_threshold,
            "q": self.q,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AwoeBinning":
        return cls(
            d["feature"], d["mode"], tuple(d["edges"]), tuple(d["awoe"]),
            d["epsilon"], d["unique_threshold"], d["q"],
        )


@dataclass(frozen=True)
class ZScoreParams:
    feature: str
    mean: float
    std: float

    @property
    def degenerate(self) -> bool:
        return self.std == 0.0


def awoe_bins(
    values: Sequence[float],
    labels: Sequence[int],
    feature: str = "x",
    epsilon: float = 1e-4,
    unique_threshold: int = 100,
    q: int = 20,
) -> AwoeBinning:
    """Fit an adaptive WoE binning from raw arrays."""
    x = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise TransformError(f"{feature}: values and labels must be equal-length 1-D arrays")
    if q < 1:
        raise InvalidParameter("q must be >= 1")
    total_pos = int((y == 1).sum())
    total_neg = int((y == 0).sum())
    if total_pos == 0:
        raise NoPositiveEvents(f"{feature}: training split has no positive events")
    if total_neg == 0:
        raise NoNegativeEvents(f"{feature}: training split has no negative events")

    uniq = np.unique(x)
    if uniq.size <= unique_threshold:
        mode = PER_UNIQUE
        edges = (uniq[:-1] + uniq[1:]) / 2.0
    else:
        mode = EQUAL_FREQUENCY
        n_bins = max(2, x.size // q)
        edges = np.unique(np.quantile(x, np.arange(1, n_bins) / n_bins))
    bins = np.searchsorted(edges, x, side="left")
    n = edges.size + 1
    pos = np.bincount(bins[y == 1], minlength=n)
    neg = np.bincount(bins[y == 0], minlength=n)
    woe = np.log((pos / total_pos + epsilon) / (neg / total_neg + epsilon))
    return AwoeBinning(
        feature, mode, tuple(float(e) for e in edges), tuple(float(w) for w in woe),
        float(epsilon), int(unique_threshold), int(q),
    )


def fit_awoe(
    train: Cohort,
    feature: str,
    target: str,
    epsilon: float = 1e-4,
    unique_threshold: int = 100,
    q: int = 20,
) -> AwoeBinning:
    ids = _train_ids(train)
    values = train.static_matrix(ids, [feature])[:, 0]
    labels = [train.record(pid).labels[target] for pid in ids]
    return awoe_bins(values, labels, feature, epsilon, unique_threshold, q)


def apply_awoe(b: AwoeBinning, value):
    idx = b.bin_of(value)
    woe = np.asarray(b.bin_awoe)[idx]
    return float(woe) if np.ndim(woe) == 0 else woe


def zscore_params(values: Sequence[float], feature: str = "x") -> ZScoreParams:
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise TransformError(f"{feature}: need at least 2 training values for a z-score")
    mean = float(x.mean())
    std = float(x.std())  # population divisor N
    if std == 0.0:
        raise DegenerateFeature(f"{feature}: zero variance on the training split")
    return ZScoreParams(feature, mean, std)


def fit_zscore(train: Cohort, feature: str) -> ZScoreParams:
    ids = _train_ids(train)
    return zscore_params(train.static_matrix(ids, [feature])[:, 0], feature)


def apply_zscore(p: ZScoreParams, value):
    return (value - p.mean) / p.std


def _train_ids(c: Cohort) -> tuple[str, ...]:
    return c.split.train_ids if c.split is not None else c.ids


@dataclass(frozen=True)
class FittedTransform:
    method: str
    target: str
    features: tuple[str, ...]
    params: tuple  # AwoeBinning | ZScoreParams per feature, empty for "none"

    def to_json(self) -> str:
        payload = {"method": self.method, "target": self.target, "features": list(self.features)}
        if self.method == "awoe":
            payload["binning"] = [b.to_dict() for b in self.params]
        elif self.method == "zscore":
            payload["zscore"] = [{"feature": p.feature, "mean": p.mean, "std": p.std} for p in self.params]
        return json.dumps(payload, indent=2)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def fit_transform(c: Cohort, method: str, target: str, epsilon: float = 1e-4,
                  unique_threshold: int = 100, q: int = 20) -> FittedTransform:
    if method not in METHODS:
        raise InvalidParameter(f"unknown transform {method!r}; expected one of {METHODS}")
    if c.split is None:
        raise TransformError("cohort must be split before fitting a transform")
    features = tuple(f for f in c.schema if f != target)
    if method == "awoe":
        params = tuple(fit_awoe(c, f, target, epsilon, unique_threshold, q) for f in features)
    elif method == "zscore":
        params = tuple(fit_zscore(c, f) for f in features)
    else:
        params = ()
    return FittedTransform(method, target, features, params)


def apply_transform(c: Cohort, fitted: FittedTransform) -> Cohort:
    cols = [c.schema.index(f) for f in fitted.features]
    records: list[PatientRecord] = []
    for rec in c.records:
        feats = []
        for k, col in enumerate(cols):
            orig = rec.statics[col]
            if fitted.method == "awoe":
                feats.append(StaticFeature(orig.name, NUMERIC, apply_awoe(fitted.params[k], orig.value)))
            elif fitted.method == "zscore":
                feats.append(StaticFeature(orig.name, NUMERIC, float(apply_zscore(fitted.params[k], orig.value))))
            else:
                feats.append(orig)
        records.append(replace(rec, statics=tuple(feats)))
    return Cohort(fitted.features, records, c.split)


def transform_cohort(c: Cohort, method: str, target: str, epsilon: float = 1e-4,
                     unique_threshold: int = 100, q: int = 20) -> Cohort:
    """Fit *method* on the train split and apply it to every record.

    The prediction target is dropped from the static schema. Test records only
    ever see parameters fitted on training rows.
    """
    return apply_transform(c, fit_transform(c, method, target, epsilon, unique_threshold, q))
