"""Confusion matrices, per-class summaries, ROC-AUC and Pearson correlation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVariance, LabelOutOfRange, LengthMismatch, OneClassOnly


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = predicted class, columns = true class."""

    counts: np.ndarray
    classes: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def table(self) -> str:
        """Aligned text table."""
        names = list(self.classes)
        width = max([len(n) for n in names] + [len(str(int(self.counts.max(initial=0)))), 4])
        corner = "pred\\true"
        lead = max([len(n) for n in names] + [len(corner)]) + 1
        rows = [corner.ljust(lead) + " ".join(n.rjust(width) for n in names)]
        for name, row in zip(names, self.counts):
            rows.append(name.ljust(lead) + " ".join(str(int(v)).rjust(width) for v in row))
        return "\n".join(rows)


def confusion(preds, truths, k: int, classes: tuple[str, ...] | None = None) -> ConfusionMatrix:
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(truths, dtype=np.int64).reshape(-1)
    if len(p) != len(t):
        raise LengthMismatch(f"{len(p)} predictions vs {len(t)} truths")
    for name, arr in (("prediction", p), ("truth", t)):
        if len(arr) and (arr.min() < 0 or arr.max() >= k):
            raise LabelOutOfRange(f"{name} label outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (p, t), 1)
    return ConfusionMatrix(counts, tuple(classes or (str(i) for i in range(k))))


def _ratio(num: float, den: float, flags: list[str], what: str) -> float:
    if den == 0:
        flags.append(what)
        return 0.0
    return num / den


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    specificity: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass
class MetricSummary:
    per_class: dict[str, ClassMetrics]
    accuracy: float
    macro: dict[str, float]
    undefined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro": self.macro,
            "per_class": {k: vars(v) for k, v in self.per_class.items()},
            "undefined": self.undefined,
        }


def summarize(cm: ConfusionMatrix) -> MetricSummary:
    """One-vs-rest precision, recall, specificity and F1 for every class.

    Ratios with a zero denominator are reported as 0 and listed in
    ``undefined`` as ``"<class>.<metric>"``.
    """
    c = cm.counts.astype(np.int64)
    total = int(c.sum())
    flags: list[str] = []
    per = {}
    for i, name in enumerate(cm.classes):
        tp = int(c[i, i])
        fp = int(c[i].sum() - tp)   # predicted i, truly something else
        fn = int(c[:, i].sum() - tp)
        tn = total - tp - fp - fn
        prec = _ratio(tp, tp + fp, flags, f"{name}.precision")
        rec = _ratio(tp, tp + fn, flags, f"{name}.recall")
        spec = _ratio(tn, tn + fp, flags, f"{name}.specificity")
        f1 = _ratio(2 * prec * rec, prec + rec, flags, f"{name}.f1")
        per[name] = ClassMetrics(prec, rec, spec, f1, tp, fp, tn, fn)
    accuracy = _ratio(int(np.trace(c)), total, flags, "accuracy")
    macro = {m: float(np.mean([getattr(v, m) for v in per.values()]))
             for m in ("precision", "recall", "specificity", "f1")}
    return MetricSummary(per, accuracy, macro, flags)


def binary_summary(tp: int, fp: int, tn: int, fn: int) -> ClassMetrics:
    """Positive-class metrics from the four binary counts."""
    cm = ConfusionMatrix(np.array([[tn, fn], [fp, tp]]), ("neg", "pos"))
    return summarize(cm).per_class["pos"]


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """Threshold sweep over the unique scores, trapezoidal AUC.

    Equal scores move FPR and TPR together, which credits ties by one half,
    so the area equals the Mann-Whitney statistic.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).astype(bool).reshape(-1)
    if len(s) != len(y):
        raise LengthMismatch(f"{len(s)} scores vs {len(y)} labels")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(thresholds, fpr, tpr, auc)


def pearson(x, y) -> float:
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} values")
    if len(a) < 2:
        raise DegenerateVariance("need at least two pairs")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise DegenerateVariance("one of the inputs is constant")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


def metrics_json(payload: dict) -> str:
    """Stable JSON: sorted keys, fixed float formatting via round-trip repr."""
    return json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj).__name__}")
