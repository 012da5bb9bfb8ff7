"""Sleep (S/NS) and respiration (A/N) classifiers plus the rule-based
respiratory event detector."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ModelMissing, SignalTooShort
from .features import (SEQ_LENGTHS, EdrSignal, FeatureSequences, build_feature_sequences,
                       derive_edr, detect_qrs, edr_spectrogram, sequences_to_image)
from .nn import Network, predict
from .preprocess import Segment, bandpass_ecg
from .signal_io import ChannelName, Label, SignalRecord

SLEEP_CLASSES = ("NS", "S")
RESP_CLASSES = ("N", "A")

RMS_WINDOW_S = 10.0
BASELINE_S = 120.0
DROP_RATIO = 0.5
MIN_EVENT_S = 10.0
MERGE_GAP_S = 5.0
DESAT_POINTS = 3.0
DESAT_WINDOW_S = 30.0


def sleep_class(label: Label) -> int | None:
    """Collapse a stage label to 1 (S) or 0 (NS); REM counts as sleep."""
    if label == Label.UNKNOWN:
        return None
    return 0 if label == Label.W else 1


def resp_class(label: Label) -> int | None:
    if label == Label.UNKNOWN:
        return None
    return 1 if label == Label.A else 0


@dataclass(frozen=True)
class EpochPrediction:
    """One analysed window.  Probabilities are those of the positive class
    (S for sleep, A for respiration)."""

    subject_id: str
    start_s: float
    sleep_label: str
    sleep_prob: float
    resp_label: str
    resp_prob: float


@dataclass(frozen=True)
class RespEvent:
    start_s: float
    end_s: float
    confirmed: bool = True
    kind: str = "APNEA_CANDIDATE"

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


# -- network inputs ------------------------------------------------------------

@dataclass(frozen=True)
class SegmentInputs:
    """Compact per-segment features from which both images are rebuilt."""

    sequences: np.ndarray  # flattened FeatureSequences, 800 values
    edr: np.ndarray        # 240 EDR samples at 4 Hz

    def sleep_image(self) -> np.ndarray:
        cuts = np.cumsum(list(SEQ_LENGTHS.values()))[:-1]
        return sequences_to_image(FeatureSequences(*np.split(self.sequences, cuts)))

    def resp_image(self) -> np.ndarray:
        return edr_spectrogram(EdrSignal(self.edr)).values


def segment_inputs(seg: Segment) -> SegmentInputs:
    """QRS -> EDR -> sequences for one filtered segment.

    Raises ``NoBeatsDetected`` / ``InsufficientBeats`` for unusable ECG.
    """
    qrs = detect_qrs(seg.ecg, seg.fs)
    edr = derive_edr(qrs, seg.len_s)
    return SegmentInputs(build_feature_sequences(qrs, edr).flat(), edr.samples)


def _classify(model: Network | None, image: np.ndarray, classes: tuple[str, str],
              what: str) -> tuple[str, float]:
    if model is None:
        raise ModelMissing(f"no {what} model loaded")
    cls, probs = predict(model, np.asarray(image, dtype=model.dtype))
    return classes[cls], float(probs[1])


def classify_sleep(model: Network | None, image: np.ndarray) -> tuple[str, float]:
    """``("S" | "NS", P(S))`` for one packed feature image."""
    return _classify(model, image, SLEEP_CLASSES, "sleep")


def classify_respiration(model: Network | None, image: np.ndarray) -> tuple[str, float]:
    """``("A" | "N", P(A))`` for one EDR spectrogram image."""
    return _classify(model, image, RESP_CLASSES, "respiration")


def classify_batch(model: Network | None, images: np.ndarray, classes: tuple[str, str],
                   what: str = "model") -> tuple[list[str], np.ndarray]:
    if model is None:
        raise ModelMissing(f"no {what} model loaded")
    if len(images) == 0:
        return [], np.zeros(0)
    idx, probs = predict(model, np.asarray(images, dtype=model.dtype))
    return [classes[i] for i in idx], probs[:, 1].astype(np.float64)


def training_arrays(items: list[tuple[SegmentInputs, Label, Label]], task: str
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Images and 0/1 targets for ``task`` ("sleep" or "resp").

    Segments with an UNKNOWN label are skipped.  Respiration uses only frames
    that start on a minute boundary, since its labels are per minute.
    """
    xs, ys = [], []
    for inputs, stage, resp_lab in items:
        if task == "sleep":
            y = sleep_class(stage)
            image = inputs.sleep_image if y is not None else None
        elif task == "resp":
            y = resp_class(resp_lab)
            image = inputs.resp_image if y is not None else None
        else:
            raise ValueError(f"task must be sleep or resp, got {task!r}")
        if y is None:
            continue
        xs.append(image().astype(np.float32))
        ys.append(y)
    if not xs:
        return np.zeros((0, 96, 96, 3), np.float32), np.zeros(0, np.int64)
    return np.stack(xs), np.array(ys, dtype=np.int64)


def split_subjects(subject_ids, val_fraction: float = 0.2) -> tuple[list[str], list[str]]:
    """Deterministic subject-wise split: the ids with the smallest hashes
    (at least one, when there are two or more subjects) go to validation."""
    ids = sorted(set(subject_ids))
    if len(ids) < 2:
        return ids, []
    n_val = max(1, int(round(val_fraction * len(ids))))
    by_hash = sorted(ids, key=lambda s: hashlib.sha256(s.encode()).hexdigest())
    val = set(by_hash[:n_val])
    return [s for s in ids if s not in val], [s for s in ids if s in val]


# -- rule-based detector ---------------------------------------------------------

def moving_rms(x: np.ndarray, fs: float, window_s: float = RMS_WINDOW_S,
               hop_s: float = 1.0) -> np.ndarray:
    """RMS of ``[k*hop, k*hop + window)`` for every full window."""
    n = int(round(window_s * fs))
    hop = max(1, int(round(hop_s * fs)))
    c = np.concatenate([[0.0], np.cumsum(np.asarray(x, dtype=np.float64) ** 2)])
    starts = np.arange(0, len(x) - n + 1, hop)
    return np.sqrt(np.maximum(c[starts + n] - c[starts], 0) / n)


def _intervals(mask: np.ndarray, hop_s: float, length_s: float) -> list[list[float]]:
    """Union of ``[k*hop, k*hop + length)`` over the set entries of ``mask``."""
    out: list[list[float]] = []
    for k in np.flatnonzero(mask):
        a, b = k * hop_s, k * hop_s + length_s
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return out


def _desaturated(spo2: np.ndarray, fs: float, start: float, end: float) -> bool:
    pre = spo2[int(max(0.0, start - DESAT_WINDOW_S) * fs) : int(start * fs)]
    post = spo2[int(start * fs) : int((end + DESAT_WINDOW_S) * fs)]
    if len(pre) == 0 or len(post) == 0:
        return False
    return bool(post.min() <= pre.mean() - DESAT_POINTS)


def detect_events_rule(signal, fs: float, spo2=None, spo2_fs: float = 1.0) -> list[RespEvent]:
    """Amplitude-collapse events in a respiration-proxy signal.

    A 10 s moving RMS (1 s hop) is compared with its 120 s moving median;
    every window below half the baseline marks its 10 s span, spans closer
    than 5 s are merged, and events shorter than 10 s are discarded.  An
    event is confirmed when SpO2 falls at least 3 points below its mean over
    the preceding 30 s, between event onset and 30 s after its end.  Without
    SpO2 every event is confirmed.
    """
    x = np.asarray(signal, dtype=np.float64)
    if len(x) < BASELINE_S * fs:
        raise SignalTooShort(f"{len(x) / fs:.1f} s < {BASELINE_S:.0f} s")
    x = x - x.mean()
    rms = moving_rms(x, fs)
    baseline = ndimage.median_filter(rms, size=int(BASELINE_S) + 1, mode="nearest")
    low = rms < DROP_RATIO * baseline
    spans = _intervals(low, 1.0, RMS_WINDOW_S)

    merged: list[list[float]] = []
    for a, b in spans:
        if merged and a - merged[-1][1] < MERGE_GAP_S:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    duration = len(x) / fs
    s = None if spo2 is None else np.asarray(spo2, dtype=np.float64)
    events = []
    for a, b in merged:
        b = min(b, duration)
        if b - a < MIN_EVENT_S:
            continue
        confirmed = True if s is None else _desaturated(s, spo2_fs, a, b)
        events.append(RespEvent(float(a), float(b), confirmed))
    return events


def night_edr(record: SignalRecord) -> EdrSignal:
    """Whole-night EDR from the record's ECG (fallback respiration proxy)."""
    ch = record.ecg
    x = bandpass_ecg(ch.samples, ch.sample_rate_hz)
    return derive_edr(detect_qrs(x - x.mean(), ch.sample_rate_hz), record.duration_s)


def detect_record_events(record: SignalRecord) -> list[RespEvent]:
    """Rule detector on the belt channel if present, else on night-long EDR."""
    spo2 = record.channel(ChannelName.SPO2)
    resp = record.channel(ChannelName.RESP)
    if resp is not None:
        sig, fs = resp.samples, resp.sample_rate_hz
    else:
        edr = night_edr(record)
        sig, fs = edr.samples, edr.rate_hz
    return detect_events_rule(sig, fs, None if spo2 is None else spo2.samples,
                              1.0 if spo2 is None else spo2.sample_rate_hz)


# -- CSV export ---------------------------------------------------------------------

PREDICTION_HEADER = ("subject", "start_s", "sleep_label", "sleep_prob", "resp_label", "resp_prob")
EVENT_HEADER = ("subject", "start_s", "end_s", "confirmed")


def write_predictions(preds: list[EpochPrediction], path: str | Path) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for p in preds:
            w.writerow([p.subject_id, f"{p.start_s:g}", p.sleep_label, f"{p.sleep_prob:.6f}",
                        p.resp_label, f"{p.resp_prob:.6f}"])
    return Path(path)


def read_predictions(path: str | Path) -> list[EpochPrediction]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochPrediction(r["subject"], float(r["start_s"]), r["sleep_label"],
                            float(r["sleep_prob"]), r["resp_label"], float(r["resp_prob"]))
            for r in rows]


def write_events(subject_id: str, events: list[RespEvent], path: str | Path) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_HEADER)
        for e in events:
            w.writerow([subject_id, f"{e.start_s:g}", f"{e.end_s:g}", int(e.confirmed)])
    return Path(path)
