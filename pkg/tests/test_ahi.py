import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apnea_screen.ahi import (AhiReport, CountMode, Severity, binary_risk, build_report,
                              compute_ahi, count_events, grade, sleep_time)
from apnea_screen.classify import EpochPrediction, RespEvent
from apnea_screen.errors import ZeroSleepTime


def _pred(start, sleep="S", resp="N"):
    return EpochPrediction("s", float(start), sleep, 0.9, resp, 0.1)


def test_sleep_time_grid():
    preds = [_pred(30 * k) for k in range(10)]
    assert sleep_time(preds) * 3600 == pytest.approx(330.0)
    assert sleep_time(preds) == pytest.approx(0.0917, abs=1e-4)
    assert sleep_time([_pred(30 * k, "NS") for k in range(10)]) == 0.0
    assert sleep_time([]) == 0.0


def test_sleep_time_tie_goes_to_sleep():
    preds = [_pred(30 * k, "S" if k % 2 == 0 else "NS") for k in range(10)]
    # interior epochs see one S and one NS; the last epoch is covered only by an NS window
    assert sleep_time(preds) * 3600 == pytest.approx(30 * 10)


def test_count_events():
    assert count_events([_pred(0, resp="A"), _pred(60, resp="A"), _pred(120, resp="A")]) == 3
    assert count_events([_pred(0, resp="A"), _pred(30, resp="A")]) == 1
    assert count_events([]) == 0
    events = [RespEvent(0, 12), RespEvent(100, 115, confirmed=False)]
    assert count_events(events, CountMode.EVENTS) == 2
    assert count_events([], "events") == 0


def test_compute_ahi():
    assert compute_ahi(21, 7) == 3.0
    assert compute_ahi(0, 8) == 0.0
    assert compute_ahi(40, 8) == 5.0
    with pytest.raises(ZeroSleepTime):
        compute_ahi(3, 0.4)


def test_grade_and_risk():
    assert grade(3) == Severity.NORMAL
    assert grade(16) == Severity.MODERATE
    assert grade(30) == Severity.SEVERE
    assert grade(5) == Severity.MILD and grade(15) == Severity.MODERATE
    assert not binary_risk(5.0) and binary_risk(5.1) and not binary_risk(0)


@given(st.floats(0, 200), st.floats(0, 200))
def test_grade_monotone(a, b):
    order = list(Severity)
    lo, hi = sorted((a, b))
    assert order.index(grade(lo)) <= order.index(grade(hi))


@given(st.integers(0, 500), st.integers(0, 500), st.floats(0.5, 12))
def test_ahi_monotone(e1, e2, hours):
    lo, hi = sorted((e1, e2))
    assert compute_ahi(lo, hours) <= compute_ahi(hi, hours)
    assert compute_ahi(hi, hours) >= compute_ahi(hi, hours + 1)


def test_report_csv_and_unreliable():
    preds = [_pred(30 * k, resp="A" if k % 4 == 0 else "N") for k in range(119)]
    rep = build_report("s", preds)
    assert rep.reliable and rep.sleep_time_h == pytest.approx(1.0)
    assert rep.event_count == 30 and rep.ahi == pytest.approx(30.0)
    assert rep.severity == Severity.SEVERE and rep.risk
    assert rep.csv_row() == ["s", "1.0000", "30", "30.0000", "Severe", "1", "1"]
    bad = build_report("s", [])
    assert not bad.reliable
    assert bad.csv_row()[4] == "UNRELIABLE" and bad.csv_row()[-1] == "0"
    assert "UNRELIABLE" in bad.text()


def test_planted_twenty_minutes_over_eight_hours():
    n = 8 * 120 - 1
    apnea = set(np.linspace(0, n - 1, 20).astype(int) // 2 * 2)
    preds = [_pred(30 * k, resp="A" if k in apnea else "N") for k in range(n)]
    rep = build_report("s", preds)
    assert rep.ahi == pytest.approx(2.5, abs=1.0)
