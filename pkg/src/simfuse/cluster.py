"""Clustering of (transformed) static features, used to gate DTW candidates.

All algorithms return a :class:`ClusterAssignment` whose cluster ids are
relabelled to be contiguous from 0 in order of the lowest member index, so
results are comparable across algorithms and runs. Ties are always broken in
favour of the lowest index.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg

from .errors import EigendecompositionFailure, EmptyInput, InvalidParameter, UnknownPatient

ALGORITHMS = ("kmeans", "agglomerative", "spectral", "optics")
NOISE = -1


@dataclass(frozen=True)
class ClusterAssignment:
    algorithm: str
    params: Mapping
    labels: Mapping  # patient_id -> cluster id
    noise_ids: frozenset = frozenset()
    info: dict = field(default_factory=dict, compare=False, repr=False)

    __hash__ = None

    @property
    def n_clusters(self) -> int:
        return len(set(self.labels.values()))

    def members(self, cluster_id: int) -> list:
        return sorted(pid for pid, c in self.labels.items() if c == cluster_id)

    def label_of(self, patient_id) -> int:
        if patient_id in self.noise_ids:
            return NOISE
        try:
            return self.labels[patient_id]
        except KeyError:
            raise UnknownPatient(patient_id) from None

    def to_csv(self, path: str | Path) -> None:
        ids = sorted(list(self.labels) + list(self.noise_ids), key=str)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "cluster_id"])
            for pid in ids:
                w.writerow([pid, self.label_of(pid)])


def read_assignment_csv(path: str | Path, algorithm: str = "unknown") -> ClusterAssignment:
    labels, noise = {}, set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cid = int(row["cluster_id"])
            if cid == NOISE:
                noise.add(row["patient_id"])
            else:
                labels[row["patient_id"]] = cid
    return ClusterAssignment(algorithm, {}, labels, frozenset(noise))


def canonical_labels(raw: Sequence[int]) -> np.ndarray:
    """Relabel to 0..k-1 by first appearance; negative labels stay noise (-1)."""
    mapping: dict[int, int] = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, lab in enumerate(raw):
        lab = int(lab)
        if lab < 0:
            out[i] = NOISE
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def _assignment(algorithm, params, raw_labels, ids, info=None) -> ClusterAssignment:
    lab = canonical_labels(raw_labels)
    ids = list(range(len(lab))) if ids is None else list(ids)
    labels = {pid: int(c) for pid, c in zip(ids, lab) if c != NOISE}
    noise = frozenset(pid for pid, c in zip(ids, lab) if c == NOISE)
    return ClusterAssignment(algorithm, dict(params), labels, noise, info or {})


def _check_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("clustering needs a non-empty N x d matrix")
    return x


def _check_k(k: int, n: int, lo: int = 1) -> None:
    if not lo <= k <= n:
        raise InvalidParameter(f"k must be in [{lo}, {n}], got {k}")


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(d, 0.0, out=d)
    return d


# ---------------------------------------------------------------- k-means


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = sq_dists(x, x[chosen]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # fewer distinct points than k: reuse the lowest unchosen index
            nxt = next(i for i in range(n) if i not in chosen)
        else:
            nxt = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        closest = np.minimum(closest, sq_dists(x, x[nxt : nxt + 1])[:, 0])
    return x[chosen].copy()


def _inertia(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd iterations; returns (labels, centroids, inertia history, n_iter)."""
    history = []
    labels = np.zeros(x.shape[0], dtype=np.int64)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = sq_dists(x, centroids)
        labels = d.argmin(axis=1)
        history.append(_inertia(x, centroids, labels))
        new = centroids.copy()
        for c in range(centroids.shape[0]):
            mask = labels == c
            if mask.any():
                new[c] = x[mask].mean(axis=0)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    d = sq_dists(x, centroids)
    labels = d.argmin(axis=1)
    history.append(_inertia(x, centroids, labels))
    return labels, centroids, history, n_iter


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
           ids: Sequence | None = None) -> ClusterAssignment:
    """k-means++ seeding followed by Lloyd iterations.

    ``info`` carries ``centroids`` (indexed by raw cluster slot),
    ``raw_labels``, ``inertia_history`` (one entry per assignment step, the
    last being the final assignment) and ``n_iter``.
    """
    x = _check_points(points)
    _check_k(k, x.shape[0])
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    labels, centroids, history, n_iter = lloyd(x, centroids, max_iter, tol)
    info = {"centroids": centroids, "raw_labels": labels, "inertia_history": history,
            "inertia": history[-1], "n_iter": n_iter}
    return _assignment("kmeans", {"k": k, "seed": seed, "max_iter": max_iter, "tol": tol},
                       labels, ids, info)


# ---------------------------------------------------------------- agglomerative


def agglomerative(points, k: int, ids: Sequence | None = None) -> ClusterAssignment:
    """Ward-linkage bottom-up merging until *k* clusters remain.

    Uses the Lance-Williams update on squared Euclidean distances. Among
    equal merge costs the pair with the lowest (i, j) index wins.
    """
    x = _check_points(points)
    n = x.shape[0]
    _check_k(k, n)
    # Ward cost between singletons: ||a-b||^2 / 2 ; track d = 2*cost for the LW recurrence
    d = sq_dists(x, x)
    np.fill_diagonal(d, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    owner = np.arange(n)
    merges = []
    for _ in range(n - k):
        flat = int(np.argmin(d))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        merges.append((i, j, float(d[i, j])))
        ni, nj = size[i], size[j]
        nk = size
        dik, djk = d[i], d[j]
        dij = d[i, j]
        new = ((ni + nk) * dik + (nj + nk) * djk - nk * dij) / (ni + nj + nk)
        new[~active] = np.inf
        new[i] = np.inf
        new[j] = np.inf
        d[i, :] = new
        d[:, i] = new
        d[j, :] = np.inf
        d[:, j] = np.inf
        size[i] = ni + nj
        active[j] = False
        owner[owner == j] = i
    return _assignment("agglomerative", {"k": k, "linkage": "ward"}, owner, ids, {"merges": merges})


# ---------------------------------------------------------------- spectral


def rbf_affinity(x: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * sq_dists(x, x))


def spectral_from_affinity(affinity, k: int, seed: int = 0, ids: Sequence | None = None,
                           params: Mapping | None = None) -> ClusterAssignment:
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[0] != a.shape[1]:
        raise EmptyInput("affinity must be a non-empty square matrix")
    n = a.shape[0]
    _check_k(k, n, lo=2 if n >= 2 else 1)
    deg = a.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = np.eye(n) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    lap = (lap + lap.T) / 2.0
    try:
        _, vecs = linalg.eigh(lap, subset_by_index=[0, k - 1])
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigendecompositionFailure(str(exc)) from exc
    if not np.all(np.isfinite(vecs)):
        raise EigendecompositionFailure("non-finite eigenvectors")
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    emb = vecs / np.where(norms > 0, norms, 1.0)
    # rounding removes eigensolver jitter so exact duplicates embed identically
    emb = np.round(emb, 10)
    inner = kmeans(emb, k, seed=seed)
    labels = inner.info["raw_labels"]
    info = {"embedding": emb}
    return _assignment("spectral", dict(params or {"k": k, "seed": seed}), labels, ids, info)


def spectral(points, k: int, gamma: float | None = None, seed: int = 0,
             ids: Sequence | None = None) -> ClusterAssignment:
    """RBF affinity, symmetric normalised Laplacian, k smallest eigenvectors, k-means."""
    x = _check_points(points)
    gamma = 1.0 / x.shape[1] if gamma is None else float(gamma)
    return spectral_from_affinity(rbf_affinity(x, gamma), k, seed, ids,
                                  {"k": k, "gamma": gamma, "seed": seed})


# ---------------------------------------------------------------- OPTICS


def optics_order(x: np.ndarray, min_samples: int):
    """OPTICS ordering with unbounded max_eps.

    Returns (ordering, reachability, core_distance). Core distance counts the
    point itself, so a point is core at radius r iff core_distance <= r.
    """
    n = x.shape[0]
    dist = np.sqrt(sq_dists(x, x))
    np.fill_diagonal(dist, 0.0)
    kth = min(min_samples, n) - 1
    core = np.sort(dist, axis=1)[:, kth] if n >= min_samples else np.full(n, np.inf)
    reach = np.full(n, np.inf)
    processed = np.zeros(n, dtype=bool)
    order = []
    for start in range(n):
        if processed[start]:
            continue
        current = start
        while True:
            processed[current] = True
            order.append(current)
            if np.isfinite(core[current]):
                cand = np.maximum(core[current], dist[current])
                upd = (~processed) & (cand < reach)
                reach[upd] = cand[upd]
            rest = np.flatnonzero(~processed)
            if rest.size == 0:
                break
            finite = rest[np.isfinite(reach[rest])]
            if finite.size == 0:
                break
            # smallest reachability, lowest index among ties
            current = int(finite[np.argmin(reach[finite])])
    return np.asarray(order), reach, core


def extract_dbscan(order, reach, core, dist, eps: float) -> np.ndarray:
    """Threshold the reachability plot at *eps* (DBSCAN-equivalent extraction).

    Core points (core distance <= eps) are labelled by walking the ordering.
    Border points are then attached to the cluster of their nearest core
    point within eps (lowest index on ties), which makes the result agree
    with DBSCAN under the same deterministic border rule.
    """
    n = len(core)
    labels = np.full(n, NOISE, dtype=np.int64)
    is_core = core <= eps
    cluster = -1
    for p in order:
        if reach[p] > eps:
            if is_core[p]:
                cluster += 1
                labels[p] = cluster
        elif is_core[p]:
            labels[p] = cluster
    for p in range(n):
        if is_core[p]:
            continue
        near = np.flatnonzero(is_core & (dist[p] <= eps))
        if near.size:
            labels[p] = labels[near[np.argmin(dist[p, near])]]
    return labels


def optics(points, min_samples: int = 5, eps_extract: float | None = None,
           ids: Sequence | None = None) -> ClusterAssignment:
    x = _check_points(points)
    if min_samples < 2:
        raise InvalidParameter("min_samples must be >= 2")
    order, reach, core = optics_order(x, min_samples)
    if eps_extract is None:
        finite = reach[np.isfinite(reach)]
        eps_extract = float(np.percentile(finite, 90)) if finite.size else 0.0
    dist = np.sqrt(sq_dists(x, x))
    np.fill_diagonal(dist, 0.0)
    labels = extract_dbscan(order, reach, core, dist, eps_extract)
    info = {"ordering": order, "reachability": reach, "core_distance": core}
    return _assignment("optics", {"min_samples": min_samples, "eps_extract": eps_extract},
                       labels, ids, info)


# ---------------------------------------------------------------- dispatch


def cluster_points(algorithm: str, points, ids: Sequence | None = None, *, k: int = 8,
                   seed: int = 0, gamma: float | None = None, min_samples: int = 5,
                   eps_extract: float | None = None) -> ClusterAssignment:
    if algorithm == "kmeans":
        return kmeans(points, k, seed=seed, ids=ids)
    if algorithm == "agglomerative":
        return agglomerative(points, k, ids=ids)
    if algorithm == "spectral":
        return spectral(points, k, gamma=gamma, seed=seed, ids=ids)
    if algorithm == "optics":
        return optics(points, min_samples=min_samples, eps_extract=eps_extract, ids=ids)
    raise InvalidParameter(f"unknown clustering algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def cluster_of(a: ClusterAssignment, patient_id, pool: Iterable | None = None) -> list:
    """Candidate neighbours of *patient_id*: its cluster mates, excluding itself.

    *pool* restricts candidates (normally to the labelled training patients).
    OPTICS noise patients fall back to the whole pool, or to every known
    patient when no pool is given. Returned ids are sorted.
    """
    label = a.label_of(patient_id)
    pool_set = None if pool is None else set(pool)
    if label == NOISE:
        everyone = pool_set if pool_set is not None else set(a.labels) | set(a.noise_ids)
        return sorted(everyone - {patient_id})
    mates = (pid for pid, c in a.labels.items() if c == label and pid != patient_id)
    if pool_set is not None:
        mates = (pid for pid in mates if pid in pool_set)
    return sorted(mates)
