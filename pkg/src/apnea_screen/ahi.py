"""Sleep time, apnea-hypopnea index, severity grade and binary risk."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .classify import EpochPrediction, RespEvent
from .errors import ZeroSleepTime

GRID_S = 30.0
MIN_SLEEP_H = 0.5
RISK_THRESHOLD = 5.0
REPORT_HEADER = ("subject", "sleep_h", "events", "ahi", "severity", "risk", "reliable")


class Severity(str, enum.Enum):
    NORMAL = "Normal"
    MILD = "Mild"
    MODERATE = "Moderate"
    SEVERE = "Severe"


class CountMode(str, enum.Enum):
    PER_MINUTE = "per_minute"
    EVENTS = "events"


SEVERITY_BOUNDS = ((5.0, Severity.NORMAL), (15.0, Severity.MILD), (30.0, Severity.MODERATE))


def sleep_time(predictions: list[EpochPrediction], grid_s: float = GRID_S,
               win_s: float = 60.0) -> float:
    """Hours of sleep on a 30 s grid.

    Every grid epoch takes the majority label of the windows covering it;
    a tie counts as sleep.
    """
    votes: dict[int, list[int]] = {}
    per_window = int(round(win_s / grid_s))
    for p in predictions:
        first = int(round(p.start_s / grid_s))
        for e in range(first, first + per_window):
            v = votes.setdefault(e, [0, 0])
            v[p.sleep_label == "S"] += 1
    asleep = sum(1 for ns, s in votes.values() if s >= ns)
    return asleep * grid_s / 3600.0


def count_events(items, mode: CountMode | str = CountMode.PER_MINUTE) -> int:
    """``num`` for the AHI.

    PER_MINUTE counts A-labelled predictions whose window starts on a minute
    boundary, so the half-overlapping windows are not counted twice.  EVENTS
    is the length of a :class:`RespEvent` list (filter on ``confirmed``
    beforehand if only desaturating events should count).
    """
    mode = CountMode(mode)
    items = list(items)
    if mode is CountMode.EVENTS:
        return len(items)
    return sum(1 for p in items if p.resp_label == "A" and math.isclose(p.start_s % 60.0, 0.0))


def compute_ahi(event_count: int, sleep_time_h: float) -> float:
    if sleep_time_h < 0:
        raise ValueError("sleep time cannot be negative")
    if sleep_time_h < MIN_SLEEP_H:
        raise ZeroSleepTime(f"{sleep_time_h:.3f} h of sleep is below {MIN_SLEEP_H} h")
    return event_count / sleep_time_h


def grade(ahi: float) -> Severity:
    """Normal below 5, Mild below 15, Moderate below 30, Severe from 30 up."""
    for bound, sev in SEVERITY_BOUNDS:
        if ahi < bound:
            return sev
    return Severity.SEVERE


def binary_risk(ahi: float) -> bool:
    return ahi > RISK_THRESHOLD


@dataclass
class AhiReport:
    subject_id: str
    sleep_time_h: float
    event_count: int
    ahi: float | None
    severity: Severity | None
    risk: bool | None
    per_epoch: list[EpochPrediction] = field(default_factory=list, repr=False)

    @property
    def reliable(self) -> bool:
        return self.ahi is not None

    def csv_row(self) -> list[str]:
        if not self.reliable:
            return [self.subject_id, f"{self.sleep_time_h:.4f}", str(self.event_count),
                    "", "UNRELIABLE", "", "0"]
        return [self.subject_id, f"{self.sleep_time_h:.4f}", str(self.event_count),
                f"{self.ahi:.4f}", self.severity.value, str(int(self.risk)), "1"]

    def text(self) -> str:
        lines = [f"subject      {self.subject_id}",
                 f"sleep_time_h {self.sleep_time_h:.4f}",
                 f"events       {self.event_count}"]
        if self.reliable:
            lines += [f"ahi          {self.ahi:.4f}",
                      f"severity     {self.severity.value}",
                      f"risk         {'yes' if self.risk else 'no'}"]
        else:
            lines += ["ahi          UNRELIABLE (sleep time below 0.5 h)"]
        return "\n".join(lines) + "\n"


def build_report(subject_id: str, predictions: list[EpochPrediction],
                 events: list[RespEvent] | None = None,
                 mode: CountMode | str = CountMode.PER_MINUTE) -> AhiReport:
    """Full per-subject report; insufficient sleep yields an UNRELIABLE report."""
    mode = CountMode(mode)
    hours = sleep_time(predictions)
    counted = (events or []) if mode is CountMode.EVENTS else predictions
    count = count_events(counted, mode)
    try:
        ahi = compute_ahi(count, hours)
    except ZeroSleepTime:
        return AhiReport(subject_id, hours, count, None, None, None, list(predictions))
    return AhiReport(subject_id, hours, count, ahi, grade(ahi), binary_risk(ahi), list(predictions))
