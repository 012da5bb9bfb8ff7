"""Deterministic SVG output: line charts and confusion heat tables."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .metrics import ConfusionMatrix, RocCurve

WIDTH, HEIGHT = 640, 400
MARGIN = 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _num(v: float) -> str:
    return f"{v:.2f}"


def _svg(body: list[str], width: int = WIDTH, height: int = HEIGHT) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join(['<?xml version="1.0" encoding="UTF-8"?>', head,
                      f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def line_chart(series: dict[str, tuple], title: str = "", xlabel: str = "", ylabel: str = "",
               xlim=None, ylim=None) -> str:
    """One ``<polyline>`` per named ``(x, y)`` series, with axes and a legend."""
    xs = [np.asarray(x, dtype=float) for x, _ in series.values()]
    ys = [np.asarray(y, dtype=float) for _, y in series.values()]
    allx = np.concatenate(xs) if xs else np.zeros(1)
    ally = np.concatenate(ys) if ys else np.zeros(1)
    x0, x1 = xlim or (float(allx.min(initial=0)), float(allx.max(initial=1)))
    y0, y1 = ylim or (float(ally.min(initial=0)), float(ally.max(initial=1)))
    if x1 <= x0:
        x1 = x0 + 1
    if y1 <= y0:
        y1 = y0 + 1
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(v):
        return MARGIN + (v - x0) / (x1 - x0) * pw

    def py(v):
        return HEIGHT - MARGIN - (v - y0) / (y1 - y0) * ph

    body = [f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
            f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
            f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 15 {HEIGHT / 2})">{escape(ylabel)}</text>']
    for i in range(5):
        vx = x0 + (x1 - x0) * i / 4
        vy = y0 + (y1 - y0) * i / 4
        body.append(f'<text x="{_num(px(vx))}" y="{HEIGHT - MARGIN + 15}" text-anchor="middle" '
                    f'font-size="10">{vx:.3g}</text>')
        body.append(f'<text x="{MARGIN - 5}" y="{_num(py(vy))}" text-anchor="end" '
                    f'font-size="10">{vy:.3g}</text>')
    for i, (name, x, y) in enumerate(zip(series, xs, ys)):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_num(px(a))},{_num(py(b))}" for a, b in zip(x, y))
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                    f'<title>{escape(name)}</title></polyline>')
        ly = MARGIN + 15 * i
        body.append(f'<text x="{WIDTH - MARGIN - 5}" y="{ly}" text-anchor="end" font-size="11" '
                    f'fill="{color}">{escape(name)}</text>')
    return _svg(body)


def roc_chart(curves: dict[str, RocCurve], title: str = "ROC") -> str:
    series = {f"{k} (AUC {c.auc:.3f})": (c.fpr, c.tpr) for k, c in curves.items()}
    return line_chart(series, title, "false positive rate", "true positive rate", (0, 1), (0, 1))


def confusion_table(cm: ConfusionMatrix, title: str = "") -> str:
    """Heat table: cell shade proportional to the count, rows = predicted."""
    k = len(cm.classes)
    cell = 60
    left, top = 110, 60
    width, height = left + cell * k + 20, top + cell * k + 40
    peak = max(int(cm.counts.max(initial=0)), 1)
    body = [f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<text x="{left + cell * k / 2}" y="{top - 25}" text-anchor="middle" font-size="11">true</text>',
            f'<text x="10" y="{top + cell * k / 2}" font-size="11">predicted</text>']
    for j, name in enumerate(cm.classes):
        body.append(f'<text x="{left + cell * j + cell / 2}" y="{top - 8}" text-anchor="middle" '
                    f'font-size="11">{escape(name)}</text>')
    for i, name in enumerate(cm.classes):
        y = top + cell * i
        body.append(f'<text x="{left - 8}" y="{y + cell / 2 + 4}" text-anchor="end" '
                    f'font-size="11">{escape(name)}</text>')
        for j in range(k):
            v = int(cm.counts[i, j])
            shade = int(round(255 * (1 - v / peak)))
            fg = "white" if shade < 128 else "black"
            x = left + cell * j
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="rgb({shade},{shade},255)" stroke="gray"/>')
            body.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                        f'font-size="12" fill="{fg}">{v}</text>')
    return _svg(body, width, height)


def write_svg(text: str, path: str | Path) -> Path:
    Path(path).write_text(text, encoding="utf-8")
    return Path(path)
