"""QRS detection, ECG-derived respiration and the two network input forms."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import InsufficientBeats, NoBeatsDetected

EDR_RATE_HZ = 4.0
SEQ_LENGTHS = {"rr_intervals": 200, "q_amps": 200, "r_amps": 200,
               "edr_amps": 100, "edr_peak_intervals": 100}
IMAGE_SIZE = 96
MIN_BEATS = 20
REFRACTORY_S = 0.2
QS_SEARCH_S = 0.08
STFT_WINDOW = 32
STFT_HOP = 4
DB_FLOOR = -60.0


@dataclass(frozen=True)
class QrsComplex:
    r_index: int
    r_amp: float
    q_index: int
    q_amp: float
    s_index: int
    time_s: float


@dataclass(frozen=True)
class EdrSignal:
    samples: np.ndarray = field(repr=False)
    rate_hz: float = EDR_RATE_HZ
    t0_s: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self.samples)) / self.rate_hz


@dataclass(frozen=True)
class FeatureSequences:
    rr_intervals: np.ndarray
    q_amps: np.ndarray
    r_amps: np.ndarray
    edr_amps: np.ndarray
    edr_peak_intervals: np.ndarray

    def rows(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in SEQ_LENGTHS]

    def flat(self) -> np.ndarray:
        return np.concatenate(self.rows())


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray = field(repr=False)  # (H, W, 3) in [0, 1]
    freq_axis: np.ndarray = field(repr=False)
    time_axis: np.ndarray = field(repr=False)


# -- QRS --------------------------------------------------------------------

def _qrs_energy(ecg: np.ndarray, fs: float) -> np.ndarray:
    """Band-pass 5-15 Hz, differentiate, square, 150 ms moving integration."""
    sos = signal.butter(2, (5.0, 15.0), btype="bandpass", fs=fs, output="sos")
    band = signal.sosfiltfilt(sos, ecg)
    deriv = np.gradient(band) * fs
    width = max(1, int(round(0.15 * fs)))
    return np.convolve(deriv * deriv, np.ones(width) / width, mode="same")


def _adaptive_peaks(mwi: np.ndarray, fs: float) -> list[int]:
    """Dual running-estimate thresholding with search-back for missed beats."""
    refractory = int(round(REFRACTORY_S * fs))
    cand, _ = signal.find_peaks(mwi, distance=max(1, refractory))
    if len(cand) == 0:
        return []
    init = mwi[: int(2 * fs)] if len(mwi) > 2 * fs else mwi
    spki = 0.25 * float(init.max())
    npki = 0.5 * float(init.mean())
    accepted: list[int] = []
    noise: list[int] = []
    rr_avg = None
    for p in cand:
        thr = npki + 0.25 * (spki - npki)
        if accepted and rr_avg and p - accepted[-1] > 1.66 * rr_avg:
            # search back between the last beat and here at half threshold
            lo, hi = accepted[-1] + refractory, p - refractory
            missed = [q for q in noise if lo <= q <= hi and mwi[q] > 0.5 * thr]
            if missed:
                best = max(missed, key=lambda q: mwi[q])
                accepted.append(best)
                spki = 0.25 * mwi[best] + 0.75 * spki
        if mwi[p] > thr:
            if accepted and p - accepted[-1] < refractory:
                if mwi[p] > mwi[accepted[-1]]:
                    accepted[-1] = p
                continue
            accepted.append(p)
            spki = 0.125 * mwi[p] + 0.875 * spki
            if len(accepted) >= 2:
                recent = np.diff(accepted[-9:])
                rr_avg = float(np.mean(recent))
        else:
            noise.append(p)
            npki = 0.125 * mwi[p] + 0.875 * npki
    return sorted(accepted)


def detect_qrs(ecg, fs: float) -> list[QrsComplex]:
    """Locate QRS complexes in a filtered, mean-removed ECG segment.

    R is the signal maximum near each detection of the energy envelope; Q and
    S are the minima within 80 ms before and after R.  Fewer than 20 beats
    raises :class:`NoBeatsDetected`.
    """
    x = np.asarray(ecg, dtype=np.float64)
    if not np.any(x) or np.ptp(x) == 0:
        raise NoBeatsDetected("flat signal")
    mwi = _qrs_energy(x, fs)
    peaks = _adaptive_peaks(mwi, fs)
    half = int(round(0.1 * fs))
    qs = max(1, int(round(QS_SEARCH_S * fs)))
    refractory = int(round(REFRACTORY_S * fs))
    r_idx: list[int] = []
    for p in peaks:
        lo, hi = max(0, p - half), min(len(x), p + half + 1)
        r = lo + int(np.argmax(x[lo:hi]))
        if r_idx and r - r_idx[-1] < refractory:
            if x[r] > x[r_idx[-1]]:
                r_idx[-1] = r
            continue
        r_idx.append(r)

    beats = []
    for r in r_idx:
        if r - 1 < 0 or r + 1 >= len(x):
            continue
        q_lo, s_hi = max(0, r - qs), min(len(x), r + qs + 1)
        q = q_lo + int(np.argmin(x[q_lo:r]))
        s = r + 1 + int(np.argmin(x[r + 1 : s_hi]))
        beats.append(QrsComplex(r, float(x[r]), q, float(x[q]), s, r / fs))
    if len(beats) < MIN_BEATS:
        raise NoBeatsDetected(f"only {len(beats)} beats found")
    return beats


# -- EDR --------------------------------------------------------------------

def derive_edr(qrs: list[QrsComplex], segment_len_s: float) -> EdrSignal:
    """R-amplitude series linearly interpolated onto a 4 Hz grid, mean removed."""
    if len(qrs) < 2:
        raise InsufficientBeats(f"{len(qrs)} beats; EDR needs at least 2")
    t = np.array([b.time_s for b in qrs])
    a = np.array([b.r_amp for b in qrs])
    grid = np.arange(int(round(segment_len_s * EDR_RATE_HZ))) / EDR_RATE_HZ
    edr = np.interp(grid, t, a)
    return EdrSignal(edr - edr.mean())


def dominant_frequency(edr: EdrSignal, fmin: float = 0.05, nfft: int = 8192) -> float:
    """Frequency of the largest zero-padded FFT bin above ``fmin``."""
    x = np.asarray(edr.samples, dtype=np.float64)
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)), n=nfft))
    freqs = np.fft.rfftfreq(nfft, 1.0 / edr.rate_hz)
    spec[freqs < fmin] = 0
    return float(freqs[int(np.argmax(spec))])


# -- fixed-length sequences ---------------------------------------------------

def pad_or_truncate(values, length: int) -> np.ndarray:
    out = np.zeros(length)
    v = np.asarray(values, dtype=np.float64)[:length]
    out[: len(v)] = v
    return out


def edr_peaks(edr: EdrSignal, min_separation_s: float = 1.0) -> np.ndarray:
    distance = max(1, int(round(min_separation_s * edr.rate_hz)))
    peaks, _ = signal.find_peaks(edr.samples, distance=distance)
    return peaks


def build_feature_sequences(qrs: list[QrsComplex], edr: EdrSignal) -> FeatureSequences:
    times = np.array([b.time_s for b in qrs])
    peaks = edr_peaks(edr)
    raw = {
        "rr_intervals": np.diff(times),
        "q_amps": [b.q_amp for b in qrs],
        "r_amps": [b.r_amp for b in qrs],
        "edr_amps": edr.samples[peaks],
        "edr_peak_intervals": np.diff(peaks) / edr.rate_hz,
    }
    return FeatureSequences(**{k: pad_or_truncate(raw[k], n) for k, n in SEQ_LENGTHS.items()})


# -- images -----------------------------------------------------------------

def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Separable linear interpolation with corner pixels aligned."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ys = np.linspace(0, h - 1, height)
    xs = np.linspace(0, w - 1, width)
    rows = np.stack([np.interp(xs, np.arange(w), r) for r in img]) if w > 1 else np.repeat(img, width, 1)
    if h == 1:
        return np.repeat(rows, height, 0)
    return np.stack([np.interp(ys, np.arange(h), rows[:, j]) for j in range(width)], axis=1)


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0 or not np.isfinite(hi - lo):
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def _to_rgb(img: np.ndarray) -> np.ndarray:
    return np.repeat(np.clip(img, 0.0, 1.0)[:, :, None], 3, axis=2)


def stft_magnitude(x: np.ndarray, window: int = STFT_WINDOW, hop: int = STFT_HOP) -> np.ndarray:
    """``(n_freq, n_frames)`` magnitude of a Hann-windowed STFT without padding."""
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    return np.abs(np.fft.rfft(frames * signal.get_window("hann", window), axis=1)).T


def edr_spectrogram(edr: EdrSignal, size: int = IMAGE_SIZE) -> Spectrogram:
    """Log-magnitude STFT image of one EDR frame.

    dB values are taken relative to the frame maximum, clipped at -60 dB,
    min-max scaled to [0, 1], resized to ``size`` x ``size`` (rows =
    frequency, low at the top) and replicated over three channels.
    """
    x = np.asarray(edr.samples, dtype=np.float64)
    if len(x) < STFT_WINDOW:
        x = np.pad(x, (0, STFT_WINDOW - len(x)))
    mag = stft_magnitude(x)
    freqs = np.fft.rfftfreq(STFT_WINDOW, 1.0 / edr.rate_hz)
    times = edr.t0_s + (np.arange(mag.shape[1]) * STFT_HOP + STFT_WINDOW / 2) / edr.rate_hz
    peak = mag.max()
    if peak <= 0:
        img = np.zeros((size, size))
    else:
        with np.errstate(divide="ignore"):
            db = 20 * np.log10(mag / peak)
        db = np.clip(db, DB_FLOOR, 0.0)
        img = resize_bilinear(_minmax(db), size, size)
    return Spectrogram(_to_rgb(img), np.linspace(freqs[0], freqs[-1], size),
                       np.linspace(times[0], times[-1], size))


def sequences_to_image(fs: FeatureSequences, size: int = IMAGE_SIZE) -> np.ndarray:
    """Pack the five sequences into a ``size`` x ``size`` x 3 image.

    Rows are tail-padded to 200, min-max scaled independently and stacked
    into a 5 x 200 array before resizing.
    """
    width = max(SEQ_LENGTHS.values())
    rows = [_minmax(pad_or_truncate(r, width)) for r in fs.rows()]
    return _to_rgb(resize_bilinear(np.stack(rows), size, size))


# -- debugging export -----------------------------------------------------------

def export_feature_csv(rows: list[tuple[str, float, FeatureSequences]], path: str | Path) -> Path:
    """One line per segment: subject, start_s, then the 800 flattened values."""
    header = ["subject", "start_s"] + [f"{k}_{i}" for k, n in SEQ_LENGTHS.items() for i in range(n)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for subject, start, seqs in rows:
            w.writerow([subject, repr(float(start))] + [repr(float(v)) for v in seqs.flat()])
    return Path(path)
