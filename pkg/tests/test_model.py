import csv
import math

import numpy as np
import pytest

from simfuse.errors import (CohortError, CohortTooSmall, DuplicatePatientId, InvalidParameter, MissingColumn,
                            NonBinaryLabel, NonMonotoneTimestamps)
from simfuse.model import (STATIC_COLUMNS, Cohort, PatientRecord, Split, StaticFeature, TimeSeries, drop_series,
                           generate_synthetic_cohort, load_cohort, load_cohort_dir, split_cohort,
                           truncate_observation_window, write_cohort)

STATIC_HEADER = "patient_id,age,weight,height,gender,admission_type,cad,chf\n"


def write_fixture(root, static_rows, series=None):
    (root / "series").mkdir(parents=True, exist_ok=True)
    (root / "static.csv").write_text(STATIC_HEADER + "".join(r + "\n" for r in static_rows), encoding="utf-8")
    for vid, rows in (series or {}).items():
        (root / "series" / f"{vid}.csv").write_text(
            "patient_id,timestamp_s,value\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return root


THREE = ["A,70,80.5,170,1,0,1,0", "B,55,60,160,0,1,0,1", "C,81.2,90,175,1,1,1,1"]


def test_load_three_patient_fixture(tmp_path):
    write_fixture(tmp_path, THREE, {"220045": ["A,0,80", "A,3600,82", "B,60,70"]})
    c = load_cohort_dir(tmp_path)
    assert len(c) == 3
    assert len(c.schema) == 7
    assert c.record("A").series["220045"].values.tolist() == [80.0, 82.0]
    assert "220045" not in c.record("C").series
    assert c.labels("cad") == {"A": 1, "B": 0, "C": 1}


def test_label_value_two_rejected_with_location(tmp_path):
    write_fixture(tmp_path, ["A,70,80,170,1,0,2,0"])
    with pytest.raises(NonBinaryLabel, match=r"static\.csv:2"):
        load_cohort_dir(tmp_path)


def test_repeated_timestamp_rejected(tmp_path):
    write_fixture(tmp_path, THREE, {"220045": ["A,10,1", "A,10,2"]})
    with pytest.raises(NonMonotoneTimestamps, match="220045.csv:3"):
        load_cohort_dir(tmp_path)


def test_missing_column(tmp_path):
    (tmp_path / "series").mkdir()
    (tmp_path / "static.csv").write_text("patient_id,age\nA,3\n")
    with pytest.raises(MissingColumn):
        load_cohort_dir(tmp_path)


def test_duplicate_patient(tmp_path):
    write_fixture(tmp_path, [THREE[0], THREE[0]])
    with pytest.raises(DuplicatePatientId):
        load_cohort_dir(tmp_path)


def test_series_for_unknown_patient(tmp_path):
    write_fixture(tmp_path, THREE, {"220045": ["Z,0,1"]})
    with pytest.raises(CohortError):
        load_cohort_dir(tmp_path)


def test_load_cohort_explicit_paths(tmp_path):
    write_fixture(tmp_path, THREE)
    assert load_cohort(tmp_path / "static.csv", tmp_path / "series").ids == ("A", "B", "C")


def test_round_trip_preserves_fingerprint(small_cohort, tmp_path):
    write_cohort(small_cohort, tmp_path)
    again = load_cohort_dir(tmp_path)
    assert again.fingerprint == small_cohort.fingerprint
    assert again.records == small_cohort.records


def test_static_feature_invariants():
    with pytest.raises(ValueError):
        StaticFeature("gender", "categorical-binary", 0.5)
    with pytest.raises(ValueError):
        StaticFeature("age", "numeric", math.nan)


def test_time_series_must_increase():
    with pytest.raises(NonMonotoneTimestamps):
        TimeSeries("x", [0.0, 5.0, 5.0], [1.0, 2.0, 3.0])
    ts = TimeSeries("x", [0.0, 5.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        ts.values[0] = 9.0


def test_split_partition_is_round_of_fraction():
    c = generate_synthetic_cohort(10, variates=1, series_len=5, seed=1)
    s = split_cohort(c, 0.2, seed=7)
    assert len(s.split.train_ids) == 8 and len(s.split.test_ids) == 2
    assert set(s.split.train_ids) | set(s.split.test_ids) == set(c.ids)
    assert split_cohort(c, 0.2, seed=7).split == s.split


@pytest.mark.parametrize("n,f", [(7, 0.3), (13, 0.5), (101, 0.2), (2, 0.5)])
def test_split_size_within_half(n, f):
    c = generate_synthetic_cohort(n, variates=1, series_len=3, seed=0)
    s = split_cohort(c, f, seed=1)
    assert abs(len(s.split.test_ids) - f * n) <= 0.5


def test_split_needs_two_records():
    rec = PatientRecord("A", tuple(StaticFeature(n, "numeric", 1.0) if n in ("age", "weight", "height")
                                   else StaticFeature(n, "categorical-binary", 1.0) for n in STATIC_COLUMNS),
                        {"cad": 1, "chf": 0}, {})
    with pytest.raises(CohortTooSmall):
        split_cohort(Cohort(STATIC_COLUMNS, [rec]), 0.2, 0)


def test_split_must_partition(small_cohort):
    ids = small_cohort.ids
    with pytest.raises(CohortError):
        small_cohort.with_split(Split(ids[:5], ids[4:]))


def test_generation_is_deterministic():
    a = generate_synthetic_cohort(100, variates=4, series_len=50, seed=1)
    b = generate_synthetic_cohort(100, variates=4, series_len=50, seed=1)
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != generate_synthetic_cohort(100, variates=4, series_len=50, seed=2).fingerprint


def test_generation_byte_identical_on_disk(tmp_path):
    for d in ("a", "b"):
        write_cohort(generate_synthetic_cohort(100, variates=4, series_len=50, seed=1), tmp_path / d)
    for rel in ["static.csv", *(f"series/{p.name}" for p in (tmp_path / "a" / "series").iterdir())]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_no_signal_cohort_statics_do_not_predict_label():
    c = generate_synthetic_cohort(100, variates=2, series_len=10, signal_strength=0.0, seed=1)
    y = np.array([c.labels("cad")[p] for p in c.ids])
    for name in ("chf", "admission_type", "gender"):
        x = c.static_matrix(names=[name])[:, 0]
        assert abs(np.mean(x == y) - 0.5) <= 0.1


def test_generator_parameters_validated():
    for kwargs in ({"n": 1}, {"n": 5, "series_len": 1}, {"n": 5, "variates": 19}, {"n": 5, "signal_strength": -1}):
        with pytest.raises(InvalidParameter):
            generate_synthetic_cohort(**kwargs)


def test_missing_fraction_drops_series():
    c = generate_synthetic_cohort(200, variates=4, series_len=5, seed=0, missing_fraction=0.25)
    present = sum(len(r.series) for r in c.records)
    assert 0.65 < present / 800 < 0.85


def _one_series_cohort(ts):
    feats = tuple(StaticFeature(n, "numeric", 1.0) if n in ("age", "weight", "height")
                  else StaticFeature(n, "categorical-binary", 0.0) for n in STATIC_COLUMNS)
    recs = [PatientRecord(p, feats, {"cad": 0, "chf": 0}, {"v": TimeSeries("v", ts, [1.0] * len(ts))})
            for p in ("A", "B")]
    return Cohort(STATIC_COLUMNS, recs)


def test_truncate_keeps_window():
    c = truncate_observation_window(_one_series_cohort([600, 7200, 50000]), 3)
    assert c.record("A").series["v"].timestamps.tolist() == [600, 7200]


def test_truncate_identity_and_emptiness():
    c = _one_series_cohort([600, 7200, 50000])
    assert truncate_observation_window(c, 100).records == c.records
    assert "v" not in truncate_observation_window(_one_series_cohort([20000, 30000]), 1).record("A").series


def test_truncate_idempotent(small_cohort):
    once = truncate_observation_window(small_cohort, 6)
    assert truncate_observation_window(once, 6).fingerprint == once.fingerprint


def test_drop_series_fraction(small_cohort):
    before = sum(len(r.series) for r in small_cohort.records)
    after = sum(len(r.series) for r in drop_series(small_cohort, 0.3, seed=1).records)
    assert after == before - round(0.3 * before)


def test_written_static_csv_header(small_cohort, tmp_path):
    write_cohort(small_cohort, tmp_path)
    with open(tmp_path / "static.csv") as fh:
        assert next(csv.reader(fh)) == ["patient_id", *STATIC_COLUMNS]
