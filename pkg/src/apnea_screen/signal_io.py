"""Record and annotation containers.

A record directory holds ``meta.json`` plus one headerless single-column CSV
per channel::

    {"subject_id": "a01", "duration_s": 600.0,
     "channels": [{"name": "ECG", "sample_rate_hz": 100, "unit": "millivolt",
                   "file": "ecg.csv"}, ...],
     "annotations": {"STAGE": "stages.csv", "RESPIRATION": "apnea.csv"}}

Channels may carry ``"file_unit"`` when the CSV is stored in another unit
(``microvolt``/``volt`` for ECG, ``fraction`` for SpO2); samples are converted
to ``unit`` on load.  Annotation files are two-column CSVs with the header
``epoch_index,label``.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (LengthMismatch, MalformedMeta, MissingChannel, NonFiniteSample,
                     NonMonotonicIndex, OutOfAnnotatedRange, UnknownLabelToken)

META_FILE = "meta.json"


class ChannelName(str, enum.Enum):
    ECG = "ECG"
    SPO2 = "SPO2"
    RESP = "RESP"


class Unit(str, enum.Enum):
    MILLIVOLT = "millivolt"
    PERCENT = "percent"
    ARBITRARY = "arbitrary"


# (stored unit, declared unit) -> multiplier
_CONVERSIONS = {
    ("microvolt", "millivolt"): 1e-3,
    ("volt", "millivolt"): 1e3,
    ("fraction", "percent"): 100.0,
}


class Label(str, enum.Enum):
    W = "W"
    N1 = "N1"
    N2 = "N2"
    N3 = "N3"
    N4 = "N4"
    REM = "REM"
    A = "A"
    N = "N"
    UNKNOWN = "UNKNOWN"


class LabelKind(str, enum.Enum):
    STAGE = "STAGE"
    RESPIRATION = "RESPIRATION"


STAGE_LABELS = frozenset({Label.W, Label.N1, Label.N2, Label.N3, Label.N4, Label.REM, Label.UNKNOWN})
RESP_LABELS = frozenset({Label.A, Label.N, Label.UNKNOWN})
DEFAULT_EPOCH_S = {LabelKind.STAGE: 30.0, LabelKind.RESPIRATION: 60.0}
# common spellings in converted hypnograms
_ALIASES = {"R": Label.REM, "WAKE": Label.W, "S1": Label.N1, "S2": Label.N2, "S3": Label.N3,
            "S4": Label.N4, "?": Label.UNKNOWN, "": Label.UNKNOWN}


def length_tolerance(fs: float) -> float:
    """Allowed |len - round(duration * fs)|: one sample of rounding slack."""
    return 1.0


@dataclass(frozen=True)
class Channel:
    name: ChannelName
    sample_rate_hz: float
    unit: Unit
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class SignalRecord:
    subject_id: str
    channels: tuple[Channel, ...]
    duration_s: float

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise MalformedMeta(f"{self.subject_id}: duplicate channel names {names}")
        if ChannelName.ECG not in names:
            raise MissingChannel(f"{self.subject_id}: no ECG channel")
        for c in self.channels:
            if not c.sample_rate_hz > 0:
                raise MalformedMeta(f"{self.subject_id}: {c.name.value} sample rate {c.sample_rate_hz}")
            expected = round(self.duration_s * c.sample_rate_hz)
            if abs(len(c.samples) - expected) > length_tolerance(c.sample_rate_hz):
                raise LengthMismatch(f"{self.subject_id}: {c.name.value} has {len(c.samples)} "
                                     f"samples, expected {expected}")
            if not np.all(np.isfinite(c.samples)):
                raise NonFiniteSample(f"{self.subject_id}: non-finite sample in {c.name.value}")

    def channel(self, name: ChannelName | str) -> Channel | None:
        name = ChannelName(name)
        for c in self.channels:
            if c.name == name:
                return c
        return None

    @property
    def ecg(self) -> Channel:
        return self.channel(ChannelName.ECG)


@dataclass(frozen=True)
class AnnotationTrack:
    epoch_len_s: float
    labels: tuple[Label, ...]
    label_kind: LabelKind

    @property
    def span_s(self) -> float:
        return len(self.labels) * self.epoch_len_s

    def covers(self, duration_s: float) -> bool:
        return self.span_s >= duration_s - self.epoch_len_s


# -- records ----------------------------------------------------------------

def _read_column(path: Path) -> np.ndarray:
    text = path.read_text(encoding="utf-8")
    try:
        return np.loadtxt(io.StringIO(text), dtype=np.float64, ndmin=1)
    except ValueError as exc:
        raise MalformedMeta(f"{path}: unparseable sample ({exc})") from exc


def _format_column(samples: np.ndarray) -> str:
    # repr() is the shortest exact round-trip form
    return "".join(f"{v!r}\n" for v in np.asarray(samples, dtype=np.float64).tolist())


def load_meta(path: str | Path) -> dict:
    meta_path = Path(path) / META_FILE
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        meta["subject_id"] = str(meta["subject_id"])
        meta["duration_s"] = float(meta["duration_s"])
        if not isinstance(meta["channels"], list):
            raise TypeError("channels must be a list")
    except FileNotFoundError as exc:
        raise MalformedMeta(f"{meta_path}: missing descriptor") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedMeta(f"{meta_path}: {exc}") from exc
    return meta


def load_record(path: str | Path) -> SignalRecord:
    """Load a record directory into a validated :class:`SignalRecord`."""
    path = Path(path)
    meta = load_meta(path)
    channels = []
    for spec in meta["channels"]:
        try:
            name = ChannelName(str(spec["name"]).upper())
            unit = Unit(spec["unit"])
            fs = float(spec["sample_rate_hz"])
            fname = spec["file"]
        except (KeyError, ValueError) as exc:
            raise MalformedMeta(f"{path}: bad channel entry {spec!r} ({exc})") from exc
        fpath = path / fname
        if not fpath.exists():
            if name == ChannelName.ECG:
                raise MissingChannel(f"{path}: ECG file {fname} not found")
            raise MalformedMeta(f"{path}: channel file {fname} not found")
        samples = _read_column(fpath)
        stored = spec.get("file_unit", unit.value)
        if stored != unit.value:
            try:
                samples = samples * _CONVERSIONS[(stored, unit.value)]
            except KeyError:
                raise MalformedMeta(f"{path}: cannot convert {stored} to {unit.value}") from None
        channels.append(Channel(name, fs, unit, samples))
    return SignalRecord(meta["subject_id"], tuple(channels), meta["duration_s"])


def write_record(record: SignalRecord, path: str | Path,
                 annotations: dict[LabelKind, AnnotationTrack] | None = None) -> Path:
    """Write ``record`` (and optional annotation tracks) as a record directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"subject_id": record.subject_id, "duration_s": record.duration_s, "channels": []}
    for c in record.channels:
        fname = f"{c.name.value.lower()}.csv"
        (path / fname).write_text(_format_column(c.samples), encoding="utf-8", newline="\n")
        meta["channels"].append({"name": c.name.value, "sample_rate_hz": c.sample_rate_hz,
                                 "unit": c.unit.value, "file": fname})
    if annotations:
        meta["annotations"] = {}
        for kind, track in annotations.items():
            fname = "stages.csv" if LabelKind(kind) == LabelKind.STAGE else "apnea.csv"
            write_annotations(track, path / fname)
            meta["annotations"][LabelKind(kind).value] = {"file": fname,
                                                          "epoch_len_s": track.epoch_len_s}
    (path / META_FILE).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8", newline="\n")
    return path


def record_annotations(path: str | Path) -> dict[LabelKind, AnnotationTrack]:
    """Annotation tracks referenced from a record's descriptor (possibly none)."""
    path = Path(path)
    meta = load_meta(path)
    out = {}
    for kind, entry in (meta.get("annotations") or {}).items():
        if isinstance(entry, str):
            entry = {"file": entry}
        kind = LabelKind(kind)
        out[kind] = load_annotations(path / entry["file"], kind, entry.get("epoch_len_s"))
    return out


# -- annotations ------------------------------------------------------------

def _parse_label(token: str, kind: LabelKind) -> Label:
    token = token.strip()
    key = token.upper()
    label = _ALIASES.get(key)
    if label is None:
        try:
            label = Label(key)
        except ValueError:
            raise UnknownLabelToken(f"unknown label {token!r}") from None
    allowed = STAGE_LABELS if kind == LabelKind.STAGE else RESP_LABELS
    if label not in allowed:
        raise UnknownLabelToken(f"label {token!r} is not a {kind.value} label")
    return label


def load_annotations(path: str | Path, kind: LabelKind | str,
                     epoch_len_s: float | None = None) -> AnnotationTrack:
    """Read an ``epoch_index,label`` CSV into a dense track.

    Gaps in the epoch index are filled with ``UNKNOWN``.
    """
    kind = LabelKind(kind)
    epoch_len_s = float(epoch_len_s or DEFAULT_EPOCH_S[kind])
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and not rows[0][0].strip().lstrip("-").isdigit():
        rows = rows[1:]
    dense: list[Label] = []
    last = -1
    for row in rows:
        if not row or not "".join(row).strip():
            continue
        if len(row) < 2:
            raise UnknownLabelToken(f"{path}: malformed row {row!r}")
        try:
            idx = int(row[0])
        except ValueError:
            raise NonMonotonicIndex(f"{path}: bad epoch index {row[0]!r}") from None
        if idx <= last:
            raise NonMonotonicIndex(f"{path}: epoch index {idx} after {last}")
        label = _parse_label(row[1], kind)
        dense.extend([Label.UNKNOWN] * (idx - last - 1))
        dense.append(label)
        last = idx
    return AnnotationTrack(epoch_len_s, tuple(dense), kind)


def write_annotations(track: AnnotationTrack, path: str | Path) -> Path:
    lines = ["epoch_index,label"] + [f"{i},{l.value}" for i, l in enumerate(track.labels)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return Path(path)


def label_for_window(track: AnnotationTrack, start_s: float, len_s: float) -> Label:
    """Collapse the annotation epochs under a window to a single label.

    Stage tracks take the majority over the epochs the window overlaps, ties
    going to the label seen first.  Respiration tracks use the epoch holding
    the window midpoint.  Windows that reach past the end of the track use the
    epochs they do overlap.
    """
    E = track.epoch_len_s
    end = start_s + len_s
    if start_s < 0 or len_s <= 0 or start_s >= track.span_s:
        raise OutOfAnnotatedRange(f"window [{start_s}, {end}) outside [0, {track.span_s})")
    if track.label_kind == LabelKind.RESPIRATION:
        k = int(math.floor((start_s + len_s / 2) / E))
        if k >= len(track.labels):
            raise OutOfAnnotatedRange(f"window midpoint {start_s + len_s / 2} past annotations")
        return track.labels[k]
    first = int(math.floor(start_s / E + 1e-9))
    last = min(int(math.ceil(end / E - 1e-9)), len(track.labels))
    covered = track.labels[first:last]
    counts = Counter(covered)
    top = max(counts.values())
    return next(l for l in covered if counts[l] == top)
