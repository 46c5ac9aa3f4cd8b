"""Cohort data model, CSV ingestion, splitting and the synthetic cohort generator.

A cohort is a set of patient admissions. Each patient has a fixed vector of
static features (demographics plus binary-encoded history), two binary target
labels (``cad`` and ``chf``), and up to 18 named vital-sign time series.
Everything here is immutable once built.

On-disk layout::

    <root>/static.csv              patient_id,age,weight,height,gender,admission_type,cad,chf
    <root>/series/<variate>.csv    patient_id,timestamp_s,value
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CohortError,
    CohortTooSmall,
    DuplicatePatientId,
    InvalidParameter,
    MissingColumn,
    NonBinaryLabel,
    NonMonotoneTimestamps,
)

NUMERIC = "numeric"
BINARY = "categorical-binary"

STATIC_COLUMNS = ("age", "weight", "height", "gender", "admission_type", "cad", "chf")
BINARY_COLUMNS = frozenset({"gender", "admission_type", "cad", "chf"})
LABELS = ("cad", "chf")
SERIES_HEADER = ("patient_id", "timestamp_s", "value")

# Chart items used as time-series variates: (item id, description, typical mean, typical sd)
VARIATE_TABLE = (
    ("1529", "Glucose", 140.0, 40.0),
    ("220045", "Heart Rate", 85.0, 15.0),
    ("220047", "Heart Rate Alarm Low", 50.0, 5.0),
    ("220050", "Arterial Blood Pressure Systolic", 120.0, 20.0),
    ("220051", "Arterial Blood Pressure diastolic", 60.0, 10.0),
    ("220052", "Arterial Blood Pressure Mean", 80.0, 12.0),
    ("220059", "Pulmonary artery pressure systolic", 40.0, 10.0),
    ("220060", "Pulmonary artery pressure diastolic", 18.0, 5.0),
    ("220061", "Pulmonary artery pressure mean", 26.0, 6.0),
    ("220074", "Central venous pressure", 10.0, 4.0),
    ("220210", "Respiratory Rate", 18.0, 4.0),
    ("223761", "Body Temperature", 98.6, 1.0),
    ("223834", "O2 Flow", 3.0, 1.5),
    ("224161", "Resp Alarm High", 35.0, 4.0),
    ("224687", "Minute volume", 9.0, 2.5),
    ("224688", "Respiratory Rate (Set)", 14.0, 3.0),
    ("224695", "Peak insp. Pressure", 22.0, 6.0),
    ("224697", "Mean Airway Pressure", 10.0, 3.0),
)
VARIATE_IDS = tuple(row[0] for row in VARIATE_TABLE)


@dataclass(frozen=True)
class StaticFeature:
    name: str
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in (NUMERIC, BINARY):
            raise CohortError(f"unknown feature kind {self.kind!r} for {self.name}")
        if not math.isfinite(self.value):
            raise CohortError(f"static feature {self.name} is not finite: {self.value}")
        if self.kind == BINARY and self.value not in (0, 1):
            raise CohortError(f"binary feature {self.name} must be 0 or 1, got {self.value}")


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """One variate of one patient: strictly increasing timestamps (seconds since admission)."""

    variate_id: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = _frozen_array(self.timestamps)
        vs = _frozen_array(self.values)
        if ts.ndim != 1 or ts.shape != vs.shape:
            raise CohortError(f"series {self.variate_id}: timestamps/values shape mismatch")
        if ts.size == 0:
            raise CohortError(f"series {self.variate_id} is empty")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise NonMonotoneTimestamps(f"series {self.variate_id}: timestamps not strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.variate_id == other.variate_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=True)
class PatientRecord:
    patient_id: str
    statics: tuple[StaticFeature, ...]
    labels: Mapping[str, int]
    series: Mapping[str, TimeSeries] = field(default_factory=dict)

    def __post_init__(self):
        labels = dict(self.labels)
        for name in LABELS:
            if name not in labels:
                raise CohortError(f"patient {self.patient_id}: missing label {name}")
            if labels[name] not in (0, 1):
                raise NonBinaryLabel(f"patient {self.patient_id}: label {name}={labels[name]!r}")
        object.__setattr__(self, "statics", tuple(self.statics))
        object.__setattr__(self, "labels", MappingProxyType({k: int(v) for k, v in labels.items()}))
        object.__setattr__(self, "series", MappingProxyType(dict(sorted(self.series.items()))))

    __hash__ = None  # mappings are not hashable

    def static(self, name: str) -> float:
        for feat in self.statics:
            if feat.name == name:
                return feat.value
        raise KeyError(name)


@dataclass(frozen=True)
class Split:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass(frozen=True)
class Cohort:
    schema: tuple[str, ...]
    records: tuple[PatientRecord, ...]
    split: Split | None = None

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.patient_id in seen:
                raise DuplicatePatientId(f"duplicate patient_id {rec.patient_id}")
            seen.add(rec.patient_id)
            if tuple(f.name for f in rec.statics) != self.schema:
                raise CohortError(f"patient {rec.patient_id}: statics do not follow the schema")
        if self.split is not None:
            train, test = set(self.split.train_ids), set(self.split.test_ids)
            if train & test or (train | test) != seen:
                raise CohortError("split is not a disjoint exhaustive partition of the cohort")

    __hash__ = None

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def _index(self) -> dict[str, PatientRecord]:
        return {r.patient_id: r for r in self.records}

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.patient_id for r in self.records)

    def record(self, patient_id: str) -> PatientRecord:
        try:
            return self._index[patient_id]
        except KeyError:
            raise CohortError(f"unknown patient {patient_id!r}") from None

    def __contains__(self, patient_id) -> bool:
        return patient_id in self._index

    def variates(self) -> tuple[str, ...]:
        """Every variate id present for at least one patient, sorted."""
        return tuple(sorted({v for r in self.records for v in r.series}))

    def labels(self, target: str, ids: Iterable[str] | None = None) -> dict[str, int]:
        ids = self.ids if ids is None else ids
        return {pid: self.record(pid).labels[target] for pid in ids}

    def static_matrix(self, ids: Sequence[str] | None = None, names: Sequence[str] | None = None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        names = self.schema if names is None else tuple(names)
        cols = [self.schema.index(n) for n in names]
        return np.array(
            [[self.record(pid).statics[c].value for c in cols] for pid in ids], dtype=np.float64
        ).reshape(len(ids), len(cols))

    def with_split(self, split: Split | None) -> "Cohort":
        return Cohort(self.schema, self.records, split)

    @cached_property
    def fingerprint(self) -> str:
        """Content hash of schema, statics, labels and series (split excluded)."""
        h = hashlib.sha256()
        h.update(repr(self.schema).encode())
        for rec in sorted(self.records, key=lambda r: r.patient_id):
            h.update(rec.patient_id.encode() + b"\0")
            h.update(repr([(f.kind, float(f.value)) for f in rec.statics]).encode())
            h.update(repr(sorted(rec.labels.items())).encode())
            for vid, ts in rec.series.items():
                h.update(vid.encode() + b"\0")
                h.update(ts.timestamps.astype("<f8").tobytes())
                h.update(ts.values.astype("<f8").tobytes())
        return h.hexdigest()


def feature_kind(name: str) -> str:
    return BINARY if name in BINARY_COLUMNS else NUMERIC


# ---------------------------------------------------------------- CSV I/O


def _parse_float(raw: str, where: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise CohortError(f"{where}: not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise CohortError(f"{where}: non-finite value {raw!r}")
    return value


def load_cohort(static_path: str | Path, series_dir: str | Path) -> Cohort:
    static_path, series_dir = Path(static_path), Path(series_dir)
    statics: dict[str, tuple[list[StaticFeature], dict[str, int]]] = {}
    with open(static_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ("patient_id",) + STATIC_COLUMNS:
            if col not in header:
                raise MissingColumn(f"{static_path}: missing column {col!r}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{static_path}:{lineno}"
            pid = row["patient_id"].strip()
            if pid in statics:
                raise DuplicatePatientId(f"{where}: duplicate patient_id {pid!r}")
            feats, labels = [], {}
            for col in STATIC_COLUMNS:
                value = _parse_float(row[col], f"{where} column {col}")
                if col in BINARY_COLUMNS and value not in (0.0, 1.0):
                    raise NonBinaryLabel(f"{where}: column {col} must be 0 or 1, got {row[col]!r}")
                feats.append(StaticFeature(col, feature_kind(col), value))
                if col in LABELS:
                    labels[col] = int(value)
            statics[pid] = (feats, labels)

    series: dict[str, dict[str, tuple[list[float], list[float]]]] = {pid: {} for pid in statics}
    if series_dir.is_dir():
        for path in sorted(series_dir.glob("*.csv")):
            vid = path.stem
            with open(path, newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                for col in SERIES_HEADER:
                    if col not in (reader.fieldnames or []):
                        raise MissingColumn(f"{path}: missing column {col!r}")
                for lineno, row in enumerate(reader, start=2):
                    where = f"{path}:{lineno}"
                    pid = row["patient_id"].strip()
                    if pid not in series:
                        raise CohortError(f"{where}: patient {pid!r} not in {static_path.name}")
                    ts = _parse_float(row["timestamp_s"], where)
                    val = _parse_float(row["value"], where)
                    times, vals = series[pid].setdefault(vid, ([], []))
                    if times and ts <= times[-1]:
                        raise NonMonotoneTimestamps(
                            f"{where}: timestamp {ts} not after {times[-1]} for patient {pid}"
                        )
                    times.append(ts)
                    vals.append(val)

    records = [
        PatientRecord(
            pid,
            tuple(feats),
            labels,
            {vid: TimeSeries(vid, t, v) for vid, (t, v) in series[pid].items()},
        )
        for pid, (feats, labels) in statics.items()
    ]
    return Cohort(STATIC_COLUMNS, records)


def load_cohort_dir(root: str | Path) -> Cohort:
    root = Path(root)
    return load_cohort(root / "static.csv", root / "series")


def _fmt(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_cohort(cohort: Cohort, root: str | Path) -> Path:
    """Write ``static.csv`` and ``series/<variate>.csv`` under *root*."""
    root = Path(root)
    (root / "series").mkdir(parents=True, exist_ok=True)
    label_cols = [lab for lab in LABELS if lab not in cohort.schema]
    with open(root / "static.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", *cohort.schema, *label_cols])
        for rec in cohort.records:
            w.writerow(
                [rec.patient_id, *(_fmt(f.value) for f in rec.statics), *(rec.labels[c] for c in label_cols)]
            )
    for vid in cohort.variates():
        with open(root / "series" / f"{vid}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SERIES_HEADER)
            for rec in cohort.records:
                ts = rec.series.get(vid)
                if ts is None:
                    continue
                for t, v in zip(ts.timestamps, ts.values):
                    w.writerow([rec.patient_id, repr(float(t)), repr(float(v))])
    return root


# ---------------------------------------------------------------- operations


def split_cohort(c: Cohort, test_fraction: float = 0.2, seed: int = 0) -> Cohort:
    """Uniform random train/test partition; ``|test| = round(test_fraction * N)``."""
    if len(c) < 2:
        raise CohortTooSmall(f"need at least 2 records to split, got {len(c)}")
    if not 0.0 < test_fraction < 1.0:
        raise InvalidParameter(f"test_fraction must be in (0, 1), got {test_fraction}")
    ids = sorted(c.ids)
    n_test = int(math.floor(test_fraction * len(ids) + 0.5))
    order = np.random.default_rng(seed).permutation(len(ids))
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    return c.with_split(Split(tuple(train), tuple(test)))


def truncate_observation_window(c: Cohort, hours: float) -> Cohort:
    """Keep samples with ``timestamp <= hours * 3600``; variates left empty become absent."""
    if hours <= 0:
        raise InvalidParameter(f"hours must be positive, got {hours}")
    limit = hours * 3600.0
    records = []
    for rec in c.records:
        kept = {}
        for vid, ts in rec.series.items():
            mask = ts.timestamps <= limit
            if mask.all():
                kept[vid] = ts
            elif mask.any():
                kept[vid] = TimeSeries(vid, ts.timestamps[mask], ts.values[mask])
        records.append(replace(rec, series=kept))
    return Cohort(c.schema, records, c.split)


def drop_series(c: Cohort, fraction: float, seed: int = 0) -> Cohort:
    """Delete a random *fraction* of the present (patient, variate) series."""
    pairs = [(r.patient_id, v) for r in c.records for v in r.series]
    rng = np.random.default_rng(seed)
    n_drop = int(round(fraction * len(pairs)))
    dropped = {pairs[i] for i in rng.choice(len(pairs), size=n_drop, replace=False)}
    records = [
        replace(r, series={v: s for v, s in r.series.items() if (r.patient_id, v) not in dropped})
        for r in c.records
    ]
    return Cohort(c.schema, records, c.split)


def _acute_profile(hours: np.ndarray, rise: float = 4.0, hold: float = 12.0, decay: float = 6.0) -> np.ndarray:
    """0 -> 1 ramp over *rise* hours, flat until *hold*, then exponential decay."""
    return np.where(hours <= hold, np.minimum(hours / rise, 1.0), np.exp(-(hours - hold) / decay))


def generate_synthetic_cohort(
    n: int,
    variates: int = 4,
    series_len: int = 100,
    signal_strength: float = 1.0,
    seed: int = 0,
    missing_fraction: float = 0.1,
    prevalence: float = 0.5,
) -> Cohort:
    """Seeded stand-in for a restricted ICU cohort with a planted class signal.

    A latent class ``z`` drives the ``cad`` label. With strength ``s > 0``:

    * ``chf`` and ``admission_type`` agree with ``z`` more often than chance,
      age shifts slightly with ``z``, and weight is more dispersed in class 1
      (a non-monotone risk profile that only a supervised binning resolves);
    * every variate of a class-1 patient carries an acute-phase excursion that
      ramps up over the first 4 hours, holds until hour 12 and then decays,
      on top of a daily oscillation whose period lengthens with ``s``.

    With ``s == 0`` no observed quantity depends on either label. The random
    stream is consumed identically whatever the parameters, so cohorts that
    differ only in *signal_strength* share all noise.
    """
    if n < 2:
        raise InvalidParameter(f"n must be >= 2, got {n}")
    if series_len < 2:
        raise InvalidParameter(f"series_len must be >= 2, got {series_len}")
    if not 1 <= variates <= len(VARIATE_TABLE):
        raise InvalidParameter(f"variates must be in [1, {len(VARIATE_TABLE)}], got {variates}")
    if signal_strength < 0:
        raise InvalidParameter("signal_strength must be >= 0")
    if not 0.0 <= missing_fraction < 1.0:
        raise InvalidParameter("missing_fraction must be in [0, 1)")
    if not 0.0 < prevalence < 1.0:
        raise InvalidParameter("prevalence must be in (0, 1)")

    rng = np.random.default_rng(seed)
    s = float(signal_strength)
    pull = math.tanh(s / 2.0)  # 0 at s=0, saturates toward 1
    width = len(str(n - 1))

    z = (rng.random(n) < prevalence).astype(int)
    sign = 2 * z - 1
    chf = (rng.random(n) < 0.5 + 0.4 * pull * sign).astype(int)
    admission = (rng.random(n) < 0.5 + 0.35 * pull * sign).astype(int)
    gender = (rng.random(n) < 0.5).astype(int)
    age = np.round(65.0 + 12.0 * rng.standard_normal(n) + 1.5 * s * sign, 1)
    weight = np.round(80.0 + 15.0 * (1.0 + 0.6 * pull * sign) * rng.standard_normal(n), 1)
    height = np.round(170.0 + 10.0 * rng.standard_normal(n), 1)

    table = VARIATE_TABLE[:variates]
    keep = rng.random((n, variates)) >= missing_fraction
    base_period = 24.0
    period = np.where(z == 1, base_period * (1.0 + 0.25 * s), base_period)
    excursion = 1.0 * s * z

    records = []
    for i in range(n):
        pid = f"P{i:0{width}d}"
        feats = (
            StaticFeature("age", NUMERIC, float(age[i])),
            StaticFeature("weight", NUMERIC, float(weight[i])),
            StaticFeature("height", NUMERIC, float(height[i])),
            StaticFeature("gender", BINARY, float(gender[i])),
            StaticFeature("admission_type", BINARY, float(admission[i])),
            StaticFeature("cad", BINARY, float(z[i])),
            StaticFeature("chf", BINARY, float(chf[i])),
        )
        hours = np.arange(series_len) + rng.uniform(0.0, 0.25, size=series_len)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        acute = _acute_profile(hours)
        series = {}
        for v, (vid, _desc, mu, sd) in enumerate(table):
            offset = 0.1 * rng.standard_normal()
            noise = 2.0 * rng.standard_normal(series_len)
            if not keep[i, v]:
                continue
            unit = offset + excursion[i] * acute + np.sin(2.0 * math.pi * hours / period[i] + phase) + noise
            series[vid] = TimeSeries(vid, np.round(hours * 3600.0, 1), np.round(mu + sd * unit, 4))
        records.append(PatientRecord(pid, feats, {"cad": int(z[i]), "chf": int(chf[i])}, series))
    return Cohort(STATIC_COLUMNS, records)
