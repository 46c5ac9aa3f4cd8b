"""Dynamic time warping distance and per-variate distance blocks.

The distance between series ``t`` (length n) and ``s`` (length m) is the
square root of the minimum, over monotone warping paths from (1, 1) to
(n, m) with unit steps right/down/diagonal, of the summed squared
differences ``(t_i - s_j)**2``. The accumulated-cost recurrence is::

    D(i, j) = (t_i - s_j)**2 + min(D(i-1, j), D(i, j-1), D(i-1, j-1))

The hot loop lives in a compiled extension (``_dtw_native``); a pure-Python
kernel with the same contract is used when the extension is missing or when
``SIMFUSE_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _dtw_python
from .cluster import ClusterAssignment, cluster_of
from .errors import EmptySeries, InfeasibleBand, SeriesTooLong
from .model import Cohort

log = logging.getLogger(__name__)

if os.environ.get("SIMFUSE_PURE_PYTHON") == "1":
    _native = None
else:
    try:
        from . import _dtw_native as _native
    except ImportError:  # extension not built
        _native = None

KERNEL = "native" if _native is not None else "python"
MISSING = None
BLOCK_HEADER = ("variate_id", "target_id", "candidate_id", "distance")


def python_cost(t, s, band: int = -1) -> float:
    return _dtw_python.dtw_cost(t, s, band)


if _native is not None:
    def native_cost(t, s, band: int = -1) -> float:
        return _native.dtw_cost(np.ascontiguousarray(t, dtype=np.float64),
                                np.ascontiguousarray(s, dtype=np.float64), band)
    _cost = native_cost
else:
    native_cost = None
    _cost = python_cost


@dataclass(frozen=True)
class DtwConfig:
    band: int | None = None  # Sakoe-Chiba radius, |i - j| <= band
    final_sqrt: bool = True
    local_cost: str = "squared-difference"

    def __post_init__(self):
        if self.local_cost != "squared-difference":
            raise ValueError(f"unsupported local cost {self.local_cost!r}")
        if self.band is not None and self.band < 0:
            raise ValueError("band must be >= 0")

    def to_dict(self) -> dict:
        return {"band": self.band, "final_sqrt": self.final_sqrt, "local_cost": self.local_cost}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DtwConfig":
        return cls(band=d.get("band"), final_sqrt=d.get("final_sqrt", True),
                   local_cost=d.get("local_cost", "squared-difference"))

    def digest_payload(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def dtw_distance(t, s, cfg: DtwConfig = DtwConfig()) -> float:
    n, m = len(t), len(s)
    if n == 0 or m == 0:
        raise EmptySeries("DTW needs two non-empty series")
    band = -1
    if cfg.band is not None:
        if cfg.band < abs(n - m):
            raise InfeasibleBand(f"band {cfg.band} < |{n} - {m}|")
        band = cfg.band
    cost = _cost(t, s, band)
    return math.sqrt(cost) if cfg.final_sqrt else cost


def dtw_distance_bruteforce(t, s) -> float:
    """Minimum over explicitly enumerated warping paths (testing oracle, n, m <= 8)."""
    t = [float(v) for v in t]
    s = [float(v) for v in s]
    n, m = len(t), len(s)
    if n == 0 or m == 0:
        raise EmptySeries("DTW needs two non-empty series")
    if n > 8 or m > 8:
        raise SeriesTooLong(f"path enumeration limited to length 8, got {n} x {m}")
    best = math.inf

    def walk(i: int, j: int, acc: float) -> None:
        nonlocal best
        acc += (t[i] - s[j]) ** 2
        if i == n - 1 and j == m - 1:
            if acc < best:
                best = acc
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return math.sqrt(best)


@dataclass(frozen=True)
class VariateDistanceBlock:
    """DTW distances for one variate; row i holds target i against its candidates."""

    variate_id: str
    target_ids: tuple
    candidate_ids: tuple  # per target: tuple of candidate ids, ascending
    distances: tuple  # per target: tuple of float or MISSING

    def row(self, target_id) -> tuple[tuple, tuple]:
        i = self.target_ids.index(target_id)
        return self.candidate_ids[i], self.distances[i]

    def rows(self) -> Iterable[tuple]:
        for tid, cands, dists in zip(self.target_ids, self.candidate_ids, self.distances):
            for cid, d in zip(cands, dists):
                if d is not MISSING:
                    yield (tid, cid, d)


def block_from_candidates(cohort: Cohort, variate_id: str, targets: Sequence,
                          candidates: Sequence[Sequence], cfg: DtwConfig = DtwConfig()) -> VariateDistanceBlock:
    """Distances for explicit (target, candidate list) pairs. Pair failures become MISSING."""
    all_cands, all_dists = [], []
    for tid, cands in zip(targets, candidates):
        cands = tuple(sorted(cands))
        ts = cohort.record(tid).series.get(variate_id)
        row = []
        for cid in cands:
            cs = cohort.record(cid).series.get(variate_id)
            if ts is None or cs is None:
                row.append(MISSING)
                continue
            try:
                d = dtw_distance(ts.values, cs.values, cfg)
            except Exception as exc:  # one bad pair must not sink the block
                log.warning("dtw %s %s-%s failed: %s", variate_id, tid, cid, exc)
                d = MISSING
            else:
                if not math.isfinite(d):
                    log.warning("dtw %s %s-%s non-finite", variate_id, tid, cid)
                    d = MISSING
            row.append(d)
        all_cands.append(cands)
        all_dists.append(tuple(row))
    return VariateDistanceBlock(variate_id, tuple(targets), tuple(all_cands), tuple(all_dists))


def compute_block(cohort: Cohort, variate_id: str, targets: Sequence, assignment: ClusterAssignment,
                  cfg: DtwConfig = DtwConfig(), pool: Iterable | None = None) -> VariateDistanceBlock:
    """Distances from each target to its cluster candidates for one variate.

    *pool* limits candidates to labelled patients (see :func:`cluster_of`).
    """
    if not targets:
        raise ValueError("compute_block needs at least one target")
    pool = None if pool is None else set(pool)
    cands = [cluster_of(assignment, t, pool) for t in targets]
    return block_from_candidates(cohort, variate_id, targets, cands, cfg)


def merge_blocks(blocks: Sequence[VariateDistanceBlock]) -> VariateDistanceBlock:
    """Concatenate target slices of the same variate, preserving order."""
    vid = blocks[0].variate_id
    if any(b.variate_id != vid for b in blocks):
        raise ValueError("cannot merge blocks of different variates")
    return VariateDistanceBlock(
        vid,
        sum((b.target_ids for b in blocks), ()),
        sum((b.candidate_ids for b in blocks), ()),
        sum((b.distances for b in blocks), ()),
    )


def write_blocks_csv(blocks: Sequence[VariateDistanceBlock], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BLOCK_HEADER)
        for b in blocks:
            for tid, cid, d in b.rows():
                w.writerow([b.variate_id, tid, cid, repr(float(d))])


def blocks_csv_bytes(blocks: Sequence[VariateDistanceBlock]) -> bytes:
    lines = [",".join(BLOCK_HEADER)]
    for b in blocks:
        lines.extend(f"{b.variate_id},{tid},{cid},{float(d)!r}" for tid, cid, d in b.rows())
    return ("\n".join(lines) + "\n").encode("utf-8")
