"""Neighbourhood similarity fusion and majority-vote prediction.

For each variate the target's lambda nearest candidates are taken from that
variate's distance block. The fused neighbourhood is the union of these
per-variate lists *with multiplicity*: a neighbour found under three
variates votes three times. Variates with no usable distances contribute
nothing.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dtw import MISSING, VariateDistanceBlock
from .errors import UnknownTarget

PREDICTION_HEADER = ("patient_id", "target", "predicted", "score", "true_label", "votes_pos", "votes_neg")


@dataclass(frozen=True)
class NeighborhoodFusion:
    target_id: str
    per_variate_nn: Mapping[str, tuple]  # variate -> ((neighbor_id, distance), ...)
    lam: int = 1
    fused_votes: Counter | None = None  # label multiset, filled when fuse() is given labels

    __hash__ = None

    def neighbors(self) -> list[tuple[str, str, float]]:
        """All (variate, neighbor, distance) occurrences, variate-sorted."""
        return [(v, nid, d) for v in sorted(self.per_variate_nn) for nid, d in self.per_variate_nn[v]]

    def votes(self, labels: Mapping[str, int]) -> Counter:
        return Counter(labels[nid] for _, nid, _ in self.neighbors())

    def nearest(self) -> tuple[str, float] | None:
        """Globally nearest neighbour across variates (ties: lowest id)."""
        occ = [(d, nid) for _, nid, d in self.neighbors()]
        if not occ:
            return None
        d, nid = min(occ)
        return nid, d


@dataclass(frozen=True)
class Prediction:
    patient_id: str
    predicted: int
    score: float
    votes_pos: int
    votes_neg: int
    fallback: str | None = field(default=None, compare=False)  # "tie" or "prior" when used


def nearest_neighbors(block: VariateDistanceBlock, target_id, lam: int = 1) -> list[tuple[str, float]]:
    """The *lam* smallest finite distances in the target's row, ties by lower id."""
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    try:
        cands, dists = block.row(target_id)
    except ValueError:
        raise UnknownTarget(target_id) from None
    finite = sorted((d, c) for c, d in zip(cands, dists) if d is not MISSING)
    return [(c, d) for d, c in finite[:lam]]


def fuse(blocks: Sequence[VariateDistanceBlock], target_id, lam: int = 1,
         labels: Mapping[str, int] | None = None) -> NeighborhoodFusion:
    """Collect per-variate neighbourhoods; blocks lacking the target contribute nothing."""
    nn = {}
    for b in blocks:
        if target_id in b.target_ids:
            found = nearest_neighbors(b, target_id, lam)
        else:
            found = []
        if found:
            nn[b.variate_id] = tuple(found)
    f = NeighborhoodFusion(target_id, dict(sorted(nn.items())), lam)
    if labels is not None:
        f = NeighborhoodFusion(target_id, f.per_variate_nn, lam, f.votes(labels))
    return f


def predict(f: NeighborhoodFusion, train_labels: Mapping[str, int]) -> tuple[int, float]:
    """(predicted label, positive-vote score) for *f*; see :func:`vote`."""
    p = vote(f, train_labels)
    return p.predicted, p.score


def vote(f: NeighborhoodFusion, train_labels: Mapping[str, int]) -> Prediction:
    """Majority vote over fused neighbours.

    Score is the positive-vote fraction. An even split goes to the label of
    the globally nearest neighbour; no votes at all fall back to the training
    majority with the training positive rate as score.
    """
    votes = f.votes(train_labels)
    pos, neg = votes.get(1, 0), votes.get(0, 0)
    total = pos + neg
    if total == 0:
        rate = sum(train_labels.values()) / len(train_labels) if train_labels else 0.5
        return Prediction(f.target_id, int(rate >= 0.5), rate, 0, 0, "prior")
    score = pos / total
    if pos > neg:
        return Prediction(f.target_id, 1, score, pos, neg)
    if neg > pos:
        return Prediction(f.target_id, 0, score, pos, neg)
    nid, _ = f.nearest()
    return Prediction(f.target_id, int(train_labels[nid]), score, pos, neg, "tie")


def write_predictions(preds: Sequence[Prediction], target: str, truth: Mapping[str, int],
                      path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for p in preds:
            w.writerow([p.patient_id, target, p.predicted, repr(float(p.score)), truth[p.patient_id],
                        p.votes_pos, p.votes_neg])
