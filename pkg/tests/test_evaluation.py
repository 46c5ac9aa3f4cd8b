import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simfuse.errors import LengthMismatch, MalformedPredictions, SingleClassInput
from simfuse.evaluation import (LEDGER_HEADER, ConfusionCounts, append_ledger, auc, build_report, confusion,
                                evaluate_run, metrics)
from simfuse.fusion import PREDICTION_HEADER

from oracles import brute_auc, brute_metrics


def test_confusion_examples():
    assert confusion([1, 0, 1], [1, 0, 1]) == ConfusionCounts(2, 0, 0, 1)
    assert confusion([1] * 4, [0] * 4) == ConfusionCounts(0, 4, 0, 0)
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == ConfusionCounts(1, 1, 1, 1)


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion([1, 0], [1])
    with pytest.raises(LengthMismatch):
        confusion([], [])
    with pytest.raises(ValueError):
        confusion([2], [1])
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


def test_metric_examples():
    m = metrics(ConfusionCounts(9, 1, 1, 9))
    assert (m.accuracy, m.precision, m.recall, m.specificity) == (0.9, 0.9, 0.9, 0.9)
    assert m.f_measure == pytest.approx(0.9, abs=1e-15)
    assert not m.degenerate
    z = metrics(ConfusionCounts(0, 0, 3, 2))
    assert z.precision == 0.0 and "precision" in z.degenerate
    assert z.f_measure == 0.0
    perfect = metrics(ConfusionCounts(5, 0, 0, 5))
    assert all(v == 1.0 for v in perfect.as_dict().values())


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_metrics_match_brute_force(pairs):
    p, t = [a for a, _ in pairs], [b for _, b in pairs]
    assert metrics(confusion(p, t)).as_dict() == brute_metrics(p, t)


@settings(max_examples=200, deadline=None)
@given(st.builds(ConfusionCounts, *[st.integers(0, 50)] * 4))
def test_transpose_identity(c):
    m = metrics(c)
    swapped = metrics(ConfusionCounts(c.tn, c.fn, c.fp, c.tp))
    assert swapped.recall == m.specificity and swapped.specificity == m.recall
    npv = c.tn / (c.tn + c.fn) if c.tn + c.fn else 0.0
    assert swapped.precision == npv
    assert swapped.accuracy == m.accuracy
    assert all(0.0 <= v <= 1.0 for v in m.as_dict().values())
    if m.recall == 0:
        assert m.f_measure == 0


def test_auc_fixtures():
    assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.4, 0.4], [1, 0]) == 0.5
    assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0


def test_auc_errors():
    with pytest.raises(SingleClassInput):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(LengthMismatch):
        auc([0.1], [1, 0])
    with pytest.raises(ValueError):
        auc([float("nan"), 0.1], [1, 0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_matches_pairwise_count(data):
    s = [a / 6 for a, _ in data]
    t = [b for _, b in data]
    if len(set(t)) < 2:
        return
    assert auc(s, t) == pytest.approx(brute_auc(s, t), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_auc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.random(50).round(2)
    t = np.r_[0, 1, rng.integers(0, 2, 48)]
    base = auc(s, t)
    for g in (np.exp, lambda x: 3 * x + 7, lambda x: x ** 3, np.arctan):
        assert auc(g(s), t) == pytest.approx(base, abs=1e-12)


def write_preds(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        w.writerows(rows)
    return path


def test_evaluate_perfect_run(tmp_path):
    p = write_preds(tmp_path / "p.csv", [("a", "cad", 1, 0.9, 1, 9, 1), ("b", "cad", 0, 0.1, 0, 1, 9),
                                         ("c", "cad", 1, 1.0, 1, 3, 0)])
    cfg = {"target": "cad", "dt_method": "awoe", "clustering": "kmeans", "k_clusters": 3, "lambda": 1}
    r = evaluate_run(p, cfg, tmp_path / "ledger.csv", wall_clock_s=1.25)
    assert r.auc == 1.0 and all(v == 1.0 for v in r.metrics.as_dict().values())
    assert r.n_test == 3 and r.counts == ConfusionCounts(2, 0, 0, 1)
    with open(tmp_path / "ledger.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LEDGER_HEADER
    assert rows[1][:5] == ["cad", "awoe", "kmeans", "3", "1"]


def test_ledger_appends_without_repeating_header(tmp_path):
    rows = [{"predicted": 1, "true_label": 1, "score": 0.7, "target": "chf"},
            {"predicted": 0, "true_label": 1, "score": 0.4, "target": "chf"}]
    r = build_report(rows, {"dt_method": "none", "clustering": "optics"})
    for _ in range(3):
        append_ledger(r, tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0] == ",".join(LEDGER_HEADER)
    assert lines[1].startswith("chf,none,optics,,1,")


def test_single_class_test_set_reports_degenerate_auc():
    rows = [{"predicted": p, "true_label": 1, "score": s, "target": "cad"} for p, s in ((1, 0.8), (0, 0.3))]
    r = build_report(rows, {})
    assert r.auc == 0.5 and r.auc_degenerate
    assert "specificity" in r.metrics.degenerate


def test_shuffled_labels_give_null_auc():
    rng = np.random.default_rng(0)
    scores = rng.random(600)
    truth = rng.permutation(np.r_[np.zeros(300, int), np.ones(300, int)])
    assert abs(auc(scores, truth) - 0.5) <= 0.05


@pytest.mark.parametrize("body,msg", [
    ("patient_id,score\n", "header"),
    (",".join(PREDICTION_HEADER) + "\na,cad,1,0.5,1\n", "fields"),
    (",".join(PREDICTION_HEADER) + "\na,cad,2,0.5,1,1,0\n", "0/1"),
    (",".join(PREDICTION_HEADER) + "\na,cad,1,1.5,1,1,0\n", "score"),
    (",".join(PREDICTION_HEADER) + "\na,cad,1,x,1,1,0\n", "float"),
    (",".join(PREDICTION_HEADER) + "\n", "no predictions"),
])
def test_malformed_predictions(tmp_path, body, msg):
    (tmp_path / "p.csv").write_text(body)
    with pytest.raises(MalformedPredictions, match=msg):
        evaluate_run(tmp_path / "p.csv", {})


def test_missing_predictions_file(tmp_path):
    with pytest.raises(MalformedPredictions):
        evaluate_run(tmp_path / "absent.csv", {})
