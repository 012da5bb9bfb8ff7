"""Segmentation, ECG band-pass filtering and segment quality gating."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import DegenerateSegment, OutOfAnnotatedRange, RecordTooShort, SampleRateTooLow
from .signal_io import AnnotationTrack, ChannelName, Label, SignalRecord, label_for_window

BAND_HZ = (0.3, 45.0)
FILTER_ORDER = 4
SPO2_RANGE = (70.0, 100.0)
N_SUBSEGMENTS = 6
DROP_REASONS = ("spo2", "ecg", "label")


@dataclass(frozen=True)
class QualityFlags:
    spo2_valid: bool
    ecg_clean: bool
    th1: float
    th2: float
    degenerate: bool = False


@dataclass(frozen=True)
class Segment:
    subject_id: str
    start_s: float
    len_s: float
    fs: float
    ecg: np.ndarray = field(repr=False)
    spo2: np.ndarray | None = field(repr=False)
    stage_label: Label
    resp_label: Label
    quality: QualityFlags


def bandpass_ecg(raw, fs: float) -> np.ndarray:
    """Zero-phase 0.3-45 Hz Butterworth band-pass (forward-backward SOS)."""
    if fs <= 2 * BAND_HZ[1]:
        raise SampleRateTooLow(f"fs={fs} Hz leaves no room above {BAND_HZ[1]} Hz")
    sos = signal.butter(FILTER_ORDER, BAND_HZ, btype="bandpass", fs=fs, output="sos")
    # even extension: odd reflection of a beat cut at the record edge rings like a spike
    return signal.sosfiltfilt(sos, np.asarray(raw, dtype=np.float64), padtype="even")


def spo2_valid(spo2) -> bool:
    """True iff every sample lies in [70, 100] percent.  Empty counts as valid."""
    s = np.asarray(spo2, dtype=np.float64)
    lo, hi = SPO2_RANGE
    return bool(np.all((s >= lo) & (s <= hi)))


def ecg_artifact_flag(ecg, fs: float | None = None) -> tuple[bool, float, float]:
    """Split a mean-removed segment into six parts and test for outliers.

    ``th1``/``th2`` are the medians of the six sub-segment maxima/minima; the
    segment is contaminated when any sample exceeds ``2*th1`` or falls below
    ``2*th2``.  Returns ``(clean, th1, th2)``.
    """
    x = np.asarray(ecg, dtype=np.float64)
    if len(x) < N_SUBSEGMENTS:
        raise DegenerateSegment(f"segment of {len(x)} samples cannot be split")
    parts = np.array_split(x, N_SUBSEGMENTS)
    th1 = float(np.median([p.max() for p in parts]))
    th2 = float(np.median([p.min() for p in parts]))
    if th1 <= 0 or th2 >= 0:
        raise DegenerateSegment(f"thresholds th1={th1:g}, th2={th2:g} are not two-sided")
    clean = not (np.any(x > 2 * th1) or np.any(x < 2 * th2))
    return clean, th1, th2


def _window_label(track: AnnotationTrack | None, start: float, length: float) -> Label:
    if track is None:
        return Label.UNKNOWN
    try:
        return label_for_window(track, start, length)
    except OutOfAnnotatedRange:
        return Label.UNKNOWN


def segment_count(duration_s: float, win_s: float = 60.0, stride_s: float = 30.0) -> int:
    if duration_s < win_s:
        return 0
    return int(np.floor((duration_s - win_s) / stride_s + 1e-9)) + 1


def segment_record(record: SignalRecord, win_s: float = 60.0, stride_s: float = 30.0,
                   stage_track: AnnotationTrack | None = None,
                   resp_track: AnnotationTrack | None = None) -> list[Segment]:
    """Cut a record into overlapping windows with labels and quality flags.

    The ECG is band-passed once over the whole record and each window is then
    mean-centred, so neighbouring windows see identical filtered samples.
    """
    if record.duration_s < win_s:
        raise RecordTooShort(f"{record.subject_id}: {record.duration_s} s < {win_s} s window")
    ecg_ch = record.ecg
    fs = ecg_ch.sample_rate_hz
    filtered = bandpass_ecg(ecg_ch.samples, fs)
    spo2_ch = record.channel(ChannelName.SPO2)
    n_win = int(round(win_s * fs))

    segments = []
    for k in range(segment_count(record.duration_s, win_s, stride_s)):
        start = k * stride_s
        i0 = int(round(start * fs))
        ecg = filtered[i0 : i0 + n_win]
        if len(ecg) < n_win:
            ecg = np.pad(ecg, (0, n_win - len(ecg)))
        ecg = ecg - ecg.mean()
        spo2 = None
        if spo2_ch is not None:
            f2 = spo2_ch.sample_rate_hz
            spo2 = np.array(spo2_ch.samples[int(round(start * f2)) : int(round((start + win_s) * f2))])
        try:
            clean, th1, th2 = ecg_artifact_flag(ecg, fs)
            degenerate = False
        except DegenerateSegment:
            clean, th1, th2, degenerate = False, float(ecg.max()), float(ecg.min()), True
        quality = QualityFlags(spo2_valid(spo2) if spo2 is not None else True,
                               clean, th1, th2, degenerate)
        segments.append(Segment(record.subject_id, start, win_s, fs, ecg, spo2,
                                _window_label(stage_track, start, win_s),
                                _window_label(resp_track, start, win_s), quality))
    return segments


def _has_label(seg: Segment, require_label: str | None) -> bool:
    known_stage = seg.stage_label != Label.UNKNOWN
    known_resp = seg.resp_label != Label.UNKNOWN
    if require_label is None:
        return True
    if require_label == "stage":
        return known_stage
    if require_label == "resp":
        return known_resp
    if require_label == "either":
        return known_stage or known_resp
    raise ValueError(f"require_label must be stage/resp/either/None, got {require_label!r}")


def filter_segments(segments: list[Segment], require_label: str | None = "either"
                    ) -> tuple[list[Segment], Counter]:
    """Keep segments passing the SpO2 gate, the ECG artifact rule and the
    label requirement.

    ``require_label`` selects which annotation must be known: ``"stage"``,
    ``"resp"``, ``"either"`` (default) or ``None`` (inference: keep unlabeled).
    Returns the retained segments in input order and a counter of drop
    reasons; each dropped segment is charged to the first failing check.
    """
    kept, reasons = [], Counter({r: 0 for r in DROP_REASONS})
    for seg in segments:
        if not seg.quality.spo2_valid:
            reasons["spo2"] += 1
        elif not seg.quality.ecg_clean:
            reasons["ecg"] += 1
        elif not _has_label(seg, require_label):
            reasons["label"] += 1
        else:
            kept.append(seg)
    return kept, reasons


def format_drop_summary(total: int, reasons: Counter) -> str:
    """Counter block: ``reason count`` lines, retained count last."""
    dropped = sum(reasons.values())
    lines = [f"segments {total}"]
    lines += [f"dropped_{r} {reasons.get(r, 0)}" for r in DROP_REASONS]
    lines.append(f"retained {total - dropped}")
    return "\n".join(lines)
