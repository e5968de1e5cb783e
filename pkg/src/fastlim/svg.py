"""Self-contained SVG plots: log-log rate reports and time series.

Output is a pure function of the input (fixed formatting, no timestamps or
random ids), so plots can be compared byte for byte.
"""
from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .diagnostics import RateReport

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=78, right=150, top=40, bottom=58)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
GUIDE_SLOPES = ((0.5, "slope 1/2", "#555555"), (1.0 / 6.0, "slope 1/6", "#999999"))


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xlim, ylim, logx: bool, logy: bool):
        self.logx, self.logy = logx, logy
        self.x0, self.x1 = (self._tx(v, logx) for v in xlim)
        self.y0, self.y1 = (self._tx(v, logy) for v in ylim)
        self.px0 = MARGIN["left"]
        self.px1 = WIDTH - MARGIN["right"]
        self.py0 = HEIGHT - MARGIN["bottom"]
        self.py1 = MARGIN["top"]

    @staticmethod
    def _tx(v, log):
        return math.log10(v) if log else float(v)

    def X(self, v) -> float:
        u = self._tx(v, self.logx)
        return self.px0 + (u - self.x0) / (self.x1 - self.x0) * (self.px1 - self.px0)

    def Y(self, v) -> float:
        u = self._tx(v, self.logy)
        return self.py0 + (u - self.y0) / (self.y1 - self.y0) * (self.py1 - self.py0)


def _limits(vals, log: bool):
    vals = np.asarray(vals, dtype=float)
    if log:
        lo, hi = math.floor(math.log10(vals.min())), math.ceil(math.log10(vals.max()))
        if lo == hi:
            lo, hi = lo - 1, hi + 1
        return 10.0**lo, 10.0**hi
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lim, log: bool):
    if log:
        a, b = round(math.log10(lim[0])), round(math.log10(lim[1]))
        return [(10.0**k, f"1e{k}") for k in range(a, b + 1)]
    raw = np.linspace(lim[0], lim[1], 6)
    return [(float(v), f"{v:.3g}") for v in raw]


def _frame(ax: _Axes, xlim, ylim, xlabel: str, ylabel: str, title: str) -> list[str]:
    out = [
        f'<rect x="{ax.px0}" y="{ax.py1}" width="{ax.px1 - ax.px0}" height="{ax.py0 - ax.py1}" '
        'fill="none" stroke="#000000" stroke-width="1"/>'
    ]
    for v, label in _ticks(xlim, ax.logx):
        x = _f(ax.X(v))
        out.append(f'<line x1="{x}" y1="{ax.py0}" x2="{x}" y2="{ax.py0 + 5}" stroke="#000000"/>')
        out.append(f'<text x="{x}" y="{ax.py0 + 19}" text-anchor="middle">{escape(label)}</text>')
    for v, label in _ticks(ylim, ax.logy):
        y = _f(ax.Y(v))
        out.append(f'<line x1="{ax.px0 - 5}" y1="{y}" x2="{ax.px0}" y2="{y}" stroke="#000000"/>')
        out.append(f'<text x="{ax.px0 - 8}" y="{y}" text-anchor="end" dominant-baseline="middle">{escape(label)}</text>')
    cx = (ax.px0 + ax.px1) / 2
    cy = (ax.py0 + ax.py1) / 2
    out.append(f'<text x="{_f(cx)}" y="{HEIGHT - 16}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="18" y="{_f(cy)}" text-anchor="middle" transform="rotate(-90 18 {_f(cy)})">{escape(ylabel)}</text>'
    )
    if title:
        out.append(f'<text x="{_f(cx)}" y="24" text-anchor="middle" font-weight="bold">{escape(title)}</text>')
    return out


def _document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">'
    )
    return "\n".join(
        ['<?xml version="1.0" encoding="UTF-8"?>', head,
         f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>', *body, "</svg>"]
    ) + "\n"


def _legend(entries) -> list[str]:
    out = []
    x = WIDTH - MARGIN["right"] + 12
    for i, (label, color, dashed) in enumerate(entries):
        y = MARGIN["top"] + 14 + 18 * i
        dash = ' stroke-dasharray="5,4"' if dashed else ""
        out.append(f'<line x1="{x}" y1="{y}" x2="{x + 22}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{x + 28}" y="{y}" dominant-baseline="middle">{escape(label)}</text>')
    return out


def rate_svg(report: RateReport, title: str = "residual vs eps", ylabel: str = "residual norm") -> str:
    """Log-log plot of a rate report with the fitted line and slope guides.

    Filled markers were used in the fit; hollow markers were dropped as plateau.
    """
    if not report.samples:
        raise ValueError("rate report has no samples")
    eps = np.array([e for e, _ in report.samples])
    res = np.array([r for _, r in report.samples])
    xlim = _limits(eps, log=True)
    fit_eps = np.array(report.fit_range_used)
    fitted = report.predicted(fit_eps)
    # guides are anchored at the largest-eps sample
    e_ref, r_ref = eps[0], res[0]
    guide_vals = [r_ref * (xlim[0] / e_ref) ** s for s, _, _ in GUIDE_SLOPES]
    ylim = _limits(np.concatenate([res, fitted, guide_vals]), log=True)
    ax = _Axes(xlim, ylim, True, True)
    body = _frame(ax, xlim, ylim, "eps", ylabel, title)
    body.append(f'<clipPath id="plot"><rect x="{ax.px0}" y="{ax.py1}" width="{ax.px1 - ax.px0}" '
                f'height="{ax.py0 - ax.py1}"/></clipPath>')
    for (s, _, color) in GUIDE_SLOPES:
        y_lo = r_ref * (xlim[0] / e_ref) ** s
        y_hi = r_ref * (xlim[1] / e_ref) ** s
        body.append(
            f'<line x1="{_f(ax.X(xlim[0]))}" y1="{_f(ax.Y(y_lo))}" x2="{_f(ax.X(xlim[1]))}" '
            f'y2="{_f(ax.Y(y_hi))}" stroke="{color}" stroke-width="1.5" stroke-dasharray="5,4" clip-path="url(#plot)"/>'
        )
    body.append(
        f'<line x1="{_f(ax.X(fit_eps[0]))}" y1="{_f(ax.Y(fitted[0]))}" x2="{_f(ax.X(fit_eps[-1]))}" '
        f'y2="{_f(ax.Y(fitted[-1]))}" stroke="{PALETTE[1]}" stroke-width="2"/>'
    )
    used = set(report.fit_range_used)
    for e, r in report.samples:
        fill = PALETTE[0] if e in used else "none"
        body.append(
            f'<circle cx="{_f(ax.X(e))}" cy="{_f(ax.Y(r))}" r="4.5" fill="{fill}" stroke="{PALETTE[0]}" stroke-width="1.5"/>'
        )
    body += _legend(
        [("samples", PALETTE[0], False), (f"fit {report.slope:.3f}", PALETTE[1], False)]
        + [(label, color, True) for _, label, color in GUIDE_SLOPES]
    )
    return _document(body)


def series_svg(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str = "",
               xlabel: str = "t", ylabel: str = "value", logy: bool = False) -> str:
    """Line plot of one or more named (t, y) series."""
    if not series:
        raise ValueError("no series to plot")
    clean = {}
    for name, (t, y) in series.items():
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise ValueError(f"series {name!r}: t and y must be 1-D of equal length")
        if t.size < 2:
            raise ValueError(f"series {name!r} needs at least two points")
        if logy and np.any(y <= 0):
            raise ValueError(f"series {name!r} has nonpositive values on a log axis")
        clean[name] = (t, y)
    allt = np.concatenate([t for t, _ in clean.values()])
    ally = np.concatenate([y for _, y in clean.values()])
    xlim = _limits(allt, log=False)
    ylim = _limits(ally, log=logy)
    ax = _Axes(xlim, ylim, False, logy)
    body = _frame(ax, xlim, ylim, xlabel, ylabel, title)
    entries = []
    for i, (name, (t, y)) in enumerate(clean.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_f(ax.X(a))},{_f(ax.Y(b))}" for a, b in zip(t, y))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        entries.append((name, color, False))
    body += _legend(entries)
    return _document(body)


def emit_svg(data, **kw) -> str:
    """Dispatch: a ``RateReport`` gives a log-log rate plot; a mapping of
    name -> (t, y) gives a time-series plot."""
    if isinstance(data, RateReport):
        return rate_svg(data, **kw)
    if isinstance(data, Mapping):
        return series_svg(data, **kw)
    raise TypeError(f"cannot plot {type(data).__name__}")
