import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apnea_screen.errors import (LengthMismatch, MalformedMeta, MissingChannel, NonFiniteSample,
                                 NonMonotonicIndex, OutOfAnnotatedRange, UnknownLabelToken)
from apnea_screen.signal_io import (AnnotationTrack, Channel, ChannelName, Label, LabelKind,
                                    SignalRecord, Unit, label_for_window, load_annotations,
                                    load_record, record_annotations, write_record)


def _write_dir(tmp_path, channels, duration=60.0, subject="s1"):
    meta = {"subject_id": subject, "duration_s": duration, "channels": []}
    for name, fs, unit, values, extra in channels:
        fname = f"{name.lower()}.csv"
        (tmp_path / fname).write_text("".join(f"{v}\n" for v in values))
        meta["channels"].append({"name": name, "sample_rate_hz": fs, "unit": unit,
                                 "file": fname, **extra})
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    return tmp_path


def test_load_consistent_record(tmp_path):
    ecg = np.sin(np.arange(6000) / 10)
    _write_dir(tmp_path, [("ECG", 100, "millivolt", ecg, {}),
                          ("SPO2", 1, "percent", [97.0] * 60, {})])
    rec = load_record(tmp_path)
    assert len(rec.channels) == 2
    assert rec.duration_s == 60.0
    assert rec.ecg.samples.shape == (6000,)
    assert rec.channel("SPO2").unit == Unit.PERCENT


def test_missing_ecg(tmp_path):
    _write_dir(tmp_path, [("SPO2", 1, "percent", [97.0] * 60, {})])
    with pytest.raises(MissingChannel):
        load_record(tmp_path)


def test_missing_ecg_file(tmp_path):
    _write_dir(tmp_path, [("ECG", 100, "millivolt", np.zeros(6000), {})])
    (tmp_path / "ecg.csv").unlink()
    with pytest.raises(MissingChannel):
        load_record(tmp_path)


@pytest.mark.parametrize("n", [5990, 5980, 6020])
def test_length_mismatch(tmp_path, n):
    _write_dir(tmp_path, [("ECG", 100, "millivolt", np.zeros(n), {})])
    with pytest.raises(LengthMismatch):
        load_record(tmp_path)


def test_malformed_meta(tmp_path):
    (tmp_path / "meta.json").write_text("{not json")
    with pytest.raises(MalformedMeta):
        load_record(tmp_path)


def test_nonfinite_sample(tmp_path):
    values = np.zeros(6000)
    values[10] = np.nan
    _write_dir(tmp_path, [("ECG", 100, "millivolt", values, {})])
    with pytest.raises(NonFiniteSample):
        load_record(tmp_path)


def test_unit_conversion(tmp_path):
    _write_dir(tmp_path, [("ECG", 100, "millivolt", [1000.0] * 6000, {"file_unit": "microvolt"}),
                          ("SPO2", 1, "percent", [0.97] * 60, {"file_unit": "fraction"})])
    rec = load_record(tmp_path)
    np.testing.assert_allclose(rec.ecg.samples, 1.0)
    np.testing.assert_allclose(rec.channel("SPO2").samples, 97.0)


def test_roundtrip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    rec = SignalRecord("x", (Channel(ChannelName.ECG, 100.0, Unit.MILLIVOLT, rng.normal(size=3000)),
                             Channel(ChannelName.SPO2, 1.0, Unit.PERCENT, rng.uniform(90, 99, 30))), 30.0)
    a = write_record(rec, tmp_path / "a")
    b = write_record(load_record(a), tmp_path / "b")
    for name in ("ecg.csv", "spo2.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    np.testing.assert_array_equal(load_record(b).ecg.samples, rec.ecg.samples)


def test_record_annotations_roundtrip(tmp_path):
    rec = SignalRecord("x", (Channel(ChannelName.ECG, 100.0, Unit.MILLIVOLT, np.zeros(12000)),), 120.0)
    stages = AnnotationTrack(30.0, (Label.W, Label.N2, Label.N2, Label.REM), LabelKind.STAGE)
    resp = AnnotationTrack(60.0, (Label.N, Label.A), LabelKind.RESPIRATION)
    path = write_record(rec, tmp_path / "r", {LabelKind.STAGE: stages, LabelKind.RESPIRATION: resp})
    ann = record_annotations(path)
    assert ann[LabelKind.STAGE] == stages
    assert ann[LabelKind.RESPIRATION] == resp


def _csv(tmp_path, text):
    p = tmp_path / "ann.csv"
    p.write_text(text)
    return p


def test_load_stage_annotations(tmp_path):
    track = load_annotations(_csv(tmp_path, "epoch_index,label\n0,W\n1,N2\n2,REM\n"), "STAGE")
    assert track.labels == (Label.W, Label.N2, Label.REM)
    assert track.epoch_len_s == 30.0


def test_load_resp_annotations(tmp_path):
    track = load_annotations(_csv(tmp_path, "epoch_index,label\n0,A\n1,N\n"), LabelKind.RESPIRATION)
    assert track.labels == (Label.A, Label.N)
    assert track.epoch_len_s == 60.0


def test_gaps_fill_unknown(tmp_path):
    track = load_annotations(_csv(tmp_path, "epoch_index,label\n0,W\n3,N1\n"), "STAGE")
    assert track.labels == (Label.W, Label.UNKNOWN, Label.UNKNOWN, Label.N1)


def test_unknown_token(tmp_path):
    with pytest.raises(UnknownLabelToken):
        load_annotations(_csv(tmp_path, "epoch_index,label\n1,Q\n"), "STAGE")
    with pytest.raises(UnknownLabelToken):
        load_annotations(_csv(tmp_path, "epoch_index,label\n0,A\n"), "STAGE")


def test_nonmonotonic(tmp_path):
    with pytest.raises(NonMonotonicIndex):
        load_annotations(_csv(tmp_path, "epoch_index,label\n1,W\n0,W\n"), "STAGE")


def _stage(*labels):
    return AnnotationTrack(30.0, tuple(Label(l) for l in labels), LabelKind.STAGE)


def test_window_majority_and_tie():
    assert label_for_window(_stage("N2", "N2"), 0, 60) == Label.N2
    assert label_for_window(_stage("W", "N1"), 0, 60) == Label.W
    assert label_for_window(_stage("W", "N1", "N1"), 0, 90) == Label.N1


def test_window_respiration_midpoint():
    resp = AnnotationTrack(60.0, (Label.A, Label.N), LabelKind.RESPIRATION)
    assert label_for_window(resp, 0, 60) == Label.A
    assert label_for_window(resp, 30, 60) == Label.N
    with pytest.raises(OutOfAnnotatedRange):
        label_for_window(resp, 90, 60)


def test_window_out_of_range():
    with pytest.raises(OutOfAnnotatedRange):
        label_for_window(_stage("W", "N1"), 60, 60)
    with pytest.raises(OutOfAnnotatedRange):
        label_for_window(_stage("W", "N1"), -30, 60)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["W", "N1", "N2", "N3", "REM"]), min_size=2, max_size=30),
       st.data())
def test_window_total_and_deterministic(labels, data):
    track = _stage(*labels)
    k = data.draw(st.integers(0, len(labels) - 1))
    first = label_for_window(track, 30.0 * k, 60.0)
    assert first == label_for_window(track, 30.0 * k, 60.0)
    covered = labels[k : k + 2]
    assert first.value in covered
