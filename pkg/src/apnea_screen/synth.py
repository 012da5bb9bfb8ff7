"""Synthetic signals with known ground truth.

Used by the test-suite, the acceptance gate and the demo scripts: beats are
planted at known times, respiration modulates R amplitude at a known rate,
and apnea minutes / sleep spans are chosen explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal_io import (AnnotationTrack, Channel, ChannelName, Label, LabelKind,
                        SignalRecord, Unit)

# (offset from R in s, amplitude, gaussian width in s); R amplitude is per beat
_WAVES = (
    ("P", -0.18, 0.12, 0.020),
    ("Q", -0.035, -0.12, 0.008),
    ("S", 0.035, -0.30, 0.008),
    ("T", 0.28, 0.30, 0.040),
)
_R_WIDTH = 0.010


def beat_times(duration_s: float, hr_bpm: float, rng: np.random.Generator | None = None,
               rr_jitter: float = 0.0, t0: float = 0.5) -> np.ndarray:
    """Beat times at ``hr_bpm`` with optional Gaussian RR jitter (fraction of RR)."""
    rr = 60.0 / hr_bpm
    out, t = [], t0
    while t < duration_s:
        out.append(t)
        step = rr * (1 + (rng.normal(0, rr_jitter) if rng is not None and rr_jitter else 0))
        t += max(step, 0.3)
    return np.array(out)


def ecg_from_beats(times: np.ndarray, r_amps, duration_s: float, fs: float,
                   noise_std: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sum of Gaussian P/Q/R/S/T waves placed around each beat time."""
    n = int(round(duration_s * fs))
    x = np.zeros(n)
    r_amps = np.broadcast_to(np.asarray(r_amps, dtype=np.float64), times.shape)
    half = int(np.ceil(0.45 * fs))
    for t, ra in zip(times, r_amps):
        c = int(round(t * fs))
        lo, hi = max(0, c - half), min(n, c + half + 1)
        if lo >= hi:
            continue
        tt = np.arange(lo, hi) / fs - t
        seg = ra * np.exp(-0.5 * (tt / _R_WIDTH) ** 2)
        for _, off, amp, width in _WAVES:
            seg += amp * np.exp(-0.5 * ((tt - off) / width) ** 2)
        x[lo:hi] += seg
    if noise_std:
        x += (rng or np.random.default_rng()).normal(0, noise_std, n)
    return x


def noise_std_for_snr(clean: np.ndarray, snr_db: float) -> float:
    return float(np.sqrt(np.mean(clean ** 2) / 10 ** (snr_db / 10)))


def modulated_amplitudes(times: np.ndarray, freq_hz: float, depth: float = 0.2,
                         phase: float = 0.0, base: float = 1.0) -> np.ndarray:
    return base * (1 + depth * np.sin(2 * np.pi * freq_hz * times + phase))


def synthetic_ecg(duration_s: float = 60.0, fs: float = 100.0, hr_bpm: float = 60.0,
                  resp_hz: float = 0.25, depth: float = 0.2, snr_db: float | None = None,
                  rng: np.random.Generator | None = None, rr_jitter: float = 0.0):
    """Convenience wrapper returning ``(ecg, beat_times)``."""
    rng = rng or np.random.default_rng(0)
    times = beat_times(duration_s, hr_bpm, rng, rr_jitter)
    amps = modulated_amplitudes(times, resp_hz, depth, rng.uniform(0, 2 * np.pi))
    clean = ecg_from_beats(times, amps, duration_s, fs)
    if snr_db is None:
        return clean, times
    return clean + rng.normal(0, noise_std_for_snr(clean, snr_db), len(clean)), times


# -- respiration-proxy nights -------------------------------------------------

@dataclass
class PlantedEvents:
    signal: np.ndarray
    fs: float
    events: list[tuple[float, float]]


def respiration_night(duration_s: float, fs: float, n_events: int,
                      rng: np.random.Generator, event_len=(10.0, 60.0),
                      residual=(0.0, 0.25), min_gap_s: float = 120.0,
                      noise_std: float = 0.03) -> PlantedEvents:
    """Breathing-like sine with slowly varying amplitude and planted collapses."""
    t = np.arange(int(round(duration_s * fs))) / fs
    rate = rng.uniform(0.2, 0.3)
    drift = 1 + 0.1 * np.sin(2 * np.pi * t / rng.uniform(300, 900) + rng.uniform(0, 6.3))
    env = drift.copy()
    events: list[tuple[float, float]] = []
    attempts = 0
    while len(events) < n_events and attempts < 10000:
        attempts += 1
        length = rng.uniform(*event_len)
        start = rng.uniform(min_gap_s, duration_s - length - min_gap_s)
        if any(start < e + min_gap_s and start + length > s - min_gap_s for s, e in events):
            continue
        events.append((start, start + length))
        m = (t >= start) & (t < start + length)
        env[m] *= rng.uniform(*residual)
    events.sort()
    phase = 2 * np.pi * np.cumsum(np.full(len(t), rate / fs))
    sig = env * np.sin(phase) + rng.normal(0, noise_std, len(t))
    return PlantedEvents(sig, fs, events)


# -- whole nights for the end-to-end pipeline ------------------------------------

@dataclass
class NightTruth:
    subject_id: str
    sleep_epochs: np.ndarray          # bool per 30 s epoch
    apnea_minutes: np.ndarray         # bool per 60 s epoch
    stage_track: AnnotationTrack
    resp_track: AnnotationTrack
    record: SignalRecord = field(repr=False)

    @property
    def sleep_hours(self) -> float:
        return float(self.sleep_epochs.sum()) * 30.0 / 3600.0

    @property
    def ahi(self) -> float:
        return float(self.apnea_minutes.sum()) / self.sleep_hours


def plan_sleep(n_epochs: int, rng: np.random.Generator, onset_epochs: int = 20,
               wake_bouts: int = 2) -> np.ndarray:
    """Wake at the start, then sleep interrupted by a few wake bouts."""
    sleep = np.zeros(n_epochs, dtype=bool)
    sleep[onset_epochs:] = True
    for _ in range(wake_bouts):
        length = int(rng.integers(6, 16))
        start = int(rng.integers(onset_epochs + 10, max(onset_epochs + 11, n_epochs - length - 4)))
        sleep[start : start + length] = False
    sleep[-4:] = False
    return sleep


def plan_apnea(sleep_epochs: np.ndarray, target_ahi: float, rng: np.random.Generator) -> np.ndarray:
    """Choose apnea minutes lying wholly inside sleep so that count/sleep_h ~ target."""
    n_min = len(sleep_epochs) // 2
    eligible = [m for m in range(n_min) if sleep_epochs[2 * m] and sleep_epochs[2 * m + 1]]
    sleep_h = sleep_epochs.sum() * 30.0 / 3600.0
    count = min(int(round(target_ahi * sleep_h)), len(eligible))
    apnea = np.zeros(n_min, dtype=bool)
    if count:
        apnea[rng.choice(eligible, size=count, replace=False)] = True
    return apnea


def synthetic_night(subject_id: str, duration_s: float, target_ahi: float, seed: int,
                    fs: float = 100.0, sleep_epochs: np.ndarray | None = None,
                    snr_db: float = 25.0) -> NightTruth:
    """ECG + SpO2 + respiration belt for one night with planted sleep and apnea.

    Sleep lowers the heart rate (~55-62 bpm vs ~80-95 bpm awake) and steadies
    it; each apnea minute flattens the respiratory R-amplitude modulation from
    10 s to 50 s into the minute and is followed by a 4-point desaturation.
    """
    rng = np.random.default_rng(seed)
    n_epochs = int(duration_s // 30)
    duration_s = n_epochs * 30.0
    sleep = plan_sleep(n_epochs, rng) if sleep_epochs is None else np.asarray(sleep_epochs, bool)
    apnea = plan_apnea(sleep, target_ahi, rng)

    hr_sleep, hr_wake = rng.uniform(55, 62), rng.uniform(80, 95)
    t, times = 0.3, []
    while t < duration_s:
        times.append(t)
        asleep = sleep[min(int(t // 30), n_epochs - 1)]
        hr = hr_sleep if asleep else hr_wake
        jitter = 0.02 if asleep else 0.06
        t += 60.0 / hr * (1 + rng.normal(0, jitter))
    times = np.array(times)

    resp_hz = rng.uniform(0.22, 0.3)
    depth = np.full(len(times), 0.25)
    sec = times % 60
    minute = (times // 60).astype(int)
    in_apnea = apnea[np.minimum(minute, len(apnea) - 1)] & (sec >= 10) & (sec < 50)
    depth[in_apnea] = 0.02
    amps = 1 + depth * np.sin(2 * np.pi * resp_hz * times)
    clean = ecg_from_beats(times, amps, duration_s, fs)
    ecg = clean + rng.normal(0, noise_std_for_snr(clean, snr_db), len(clean))

    spo2 = np.full(int(duration_s), rng.uniform(95.5, 97.5))
    for m in np.flatnonzero(apnea):
        lo, hi = 60 * m + 35, min(len(spo2), 60 * m + 65)
        spo2[lo:hi] -= 4.0
    belt_fs = 10.0
    bt = np.arange(int(duration_s * belt_fs)) / belt_fs
    benv = np.ones_like(bt)
    bmin = (bt // 60).astype(int)
    bsec = bt % 60
    benv[apnea[np.minimum(bmin, len(apnea) - 1)] & (bsec >= 10) & (bsec < 50)] = 0.1
    belt = benv * np.sin(2 * np.pi * resp_hz * bt) + rng.normal(0, 0.02, len(bt))

    record = SignalRecord(subject_id, (
        Channel(ChannelName.ECG, fs, Unit.MILLIVOLT, ecg),
        Channel(ChannelName.SPO2, 1.0, Unit.PERCENT, np.round(spo2, 1)),
        Channel(ChannelName.RESP, belt_fs, Unit.ARBITRARY, belt),
    ), duration_s)
    stages = tuple(Label(rng.choice(["N1", "N2", "N2", "N3", "REM"])) if s else Label.W
                   for s in sleep)
    resp = tuple(Label.A if a else Label.N for a in apnea)
    return NightTruth(subject_id, sleep, apnea,
                      AnnotationTrack(30.0, stages, LabelKind.STAGE),
                      AnnotationTrack(60.0, resp, LabelKind.RESPIRATION), record)


# -- toy image corpus -------------------------------------------------------------

def halves_images(n: int, size: int = 96, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class 0 has a bright top half, class 1 a bright bottom half."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.uniform(0.0, 0.3, size=(n, size, size, 3))
    h = size // 2
    x[y == 0, :h] += 0.6
    x[y == 1, h:] += 0.6
    return x.astype(np.float32), y
