import numpy as np
import pytest

from varjm.data import (
    IngestReport,
    LongitudinalDataset,
    Observation,
    SchemaError,
    SurvivalRecord,
    ValidationError,
    emit,
    ingest,
    subject_view,
)


def small_dataset():
    obs = [
        Observation("a", "marker", t, v)
        for t, v in [(0.0, 140.2), (1.0, 143.9), (2.0, 147.13)]
    ] + [
        Observation("b", "marker", t, v)
        for t, v in [(0.0, 150.7), (1.0, 148.2), (2.0, 151.5)]
    ]
    surv = [
        SurvivalRecord("a", 3.5, 1, (("age", 61.0),)),
        SurvivalRecord("b", 2.0, 0, (("age", 52.5),)),
    ]
    return LongitudinalDataset(obs, surv)


def test_identity_ingestion_roundtrip(tmp_path):
    ds = small_dataset()
    long_p, surv_p = tmp_path / "long.csv", tmp_path / "surv.csv"
    emit(ds, long_p, surv_p)
    ds2, report = ingest(long_p, surv_p)
    assert ds2 == ds
    assert report.n_rows_dropped == 0
    assert ds2.n_observations() == 6
    assert ds2.n_subjects == 2


def test_roundtrip_bit_exact_random_values(tmp_path):
    rng = np.random.default_rng(17)
    obs, surv = [], []
    for i in range(5):
        sid = f"s{i}"
        times = np.sort(rng.uniform(0, 4, size=4))
        event = float(times[-1] + rng.uniform(0.1, 2.0))
        obs.extend(Observation(sid, "m", float(t), float(v))
                   for t, v in zip(times, rng.normal(0, 123.4, 4)))
        surv.append(SurvivalRecord(sid, event, int(rng.integers(0, 2))))
    ds = LongitudinalDataset(obs, surv)
    emit(ds, tmp_path / "l.csv", tmp_path / "s.csv")
    ds2, _ = ingest(tmp_path / "l.csv", tmp_path / "s.csv")
    # bit-exact value round trip
    _, t1, v1 = ds.observation_arrays("m")
    _, t2, v2 = ds2.observation_arrays("m")
    assert np.array_equal(t1, t2) and np.array_equal(v1, v2)
    assert np.array_equal(ds.event_time, ds2.event_time)


def test_observation_at_event_time_boundary_allowed():
    obs = [Observation("a", "m", 2.0, 1.0)]
    surv = [SurvivalRecord("a", 2.0, 1)]
    ds = LongitudinalDataset(obs, surv)
    assert ds.n_observations() == 1


def test_observation_after_event_time_names_subject():
    obs = [Observation("late", "m", 2.5, 1.0)]
    surv = [SurvivalRecord("late", 2.0, 1)]
    with pytest.raises(ValidationError, match="late"):
        LongitudinalDataset(obs, surv)


def test_duplicate_time_rejected():
    obs = [Observation("a", "m", 1.0, 1.0), Observation("a", "m", 1.0, 2.0)]
    surv = [SurvivalRecord("a", 2.0, 1)]
    with pytest.raises(ValidationError, match="duplicate"):
        LongitudinalDataset(obs, surv)


def test_missing_survival_record():
    obs = [Observation("a", "m", 1.0, 1.0)]
    with pytest.raises(ValidationError, match="survival"):
        LongitudinalDataset(obs, [])


def test_subject_view_slices():
    ds = small_dataset()
    view = subject_view(ds, "a")
    times, values = view.observations["marker"]
    assert times.tolist() == [0.0, 1.0, 2.0]
    assert view.event_time == 3.5
    assert view.covariates == {"age": 61.0}
    # mutating the view must not touch the dataset
    values[0] = -1.0
    _, _, v = ds.observation_arrays("marker")
    assert v[0] == 140.2


def test_subject_view_unknown_id():
    with pytest.raises(KeyError, match="nope"):
        subject_view(small_dataset(), "nope")


def test_subject_view_single_observation():
    obs = [Observation("solo", "m", 0.5, 3.3)]
    surv = [SurvivalRecord("solo", 1.0, 0)]
    ds = LongitudinalDataset(obs, surv)
    times, _ = subject_view(ds, "solo").observations["m"]
    assert times.size == 1


def test_slice_sizes_sum_to_total():
    ds = small_dataset()
    total = sum(
        sum(t.size for t, _ in subject_view(ds, sid).observations.values())
        for sid in ds.subject_ids
    )
    assert total == ds.n_observations()


def test_missing_column_schema_error(tmp_path):
    (tmp_path / "long.csv").write_text("subject,outcome,time\n a,m,0\n")
    (tmp_path / "surv.csv").write_text("subject,event_time,status\na,1,1\n")
    with pytest.raises(SchemaError, match="value"):
        ingest(tmp_path / "long.csv", tmp_path / "surv.csv")


def test_schema_remapping(tmp_path):
    (tmp_path / "long.csv").write_text(
        "id,biomarker,visit_time,wbc\na,m,0.0,1.5\na,m,1.0,1.7\n")
    (tmp_path / "surv.csv").write_text("id,os_time,died\na,2.0,1\n")
    schema = {"subject": "id", "outcome": "biomarker", "time": "visit_time",
              "value": "wbc", "event_time": "os_time", "status": "died"}
    ds, _ = ingest(tmp_path / "long.csv", tmp_path / "surv.csv", schema=schema)
    assert ds.n_observations() == 2


def test_dropped_rows_reported(tmp_path):
    (tmp_path / "long.csv").write_text(
        "subject,outcome,time,value\na,m,0.0,1.0\na,m,1.0,\nb,m,0.5,\n")
    (tmp_path / "surv.csv").write_text("subject,event_time,status\na,2.0,1\nb,2.0,0\n")
    ds, report = ingest(tmp_path / "long.csv", tmp_path / "surv.csv")
    assert report.n_rows_dropped == 2
    assert report.dropped_subjects == ("b",)
    assert ds.n_subjects == 1


def test_subjects_indexed_contiguously():
    ds = small_dataset()
    assert [ds.subject_index(s) for s in ds.subject_ids] == [0, 1]
