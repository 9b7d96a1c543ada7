"""Deterministic SVG line charts for the ensemble curves and barrier panels.

Output bytes depend only on the input numbers: coordinates are written with a
fixed number of decimals and elements are emitted in input order.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
SCENARIO_COLORS = {"TL_TL": "#1f77b4", "RI_RI": "#ff7f0e", "TL_TLstar": "#2ca02c", "RI_RIstar": "#d62728"}
SCENARIO_TITLES = {"TL_TL": "TL to TL", "RI_RI": "RI-DL to RI-DL", "TL_TLstar": "TL to TL*",
                   "RI_RIstar": "RI-DL to RI-DL*"}


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _nice_range(lo, hi, pad=0.05):
    if hi - lo < 1e-6:
        lo, hi = lo - 0.01, hi + 0.01
    span = hi - lo
    return lo - pad * span, hi + pad * span


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


class _Frame:
    """Maps data coordinates into one plotting rectangle."""

    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / (hi - lo) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (y - lo) / (hi - lo) * self.h

    def axes(self, xlabel, ylabel, xticks, yticks, title=None):
        out = [
            f'<rect x="{_f(self.x0)}" y="{_f(self.y0)}" width="{_f(self.w)}" height="{_f(self.h)}" '
            f'fill="none" stroke="#333333" stroke-width="1"/>'
        ]
        for pos, text in xticks:
            x = self.px(pos)
            yb = self.y0 + self.h
            out.append(f'<line x1="{_f(x)}" y1="{_f(yb)}" x2="{_f(x)}" y2="{_f(yb + 4)}" stroke="#333333"/>')
            out.append(f'<text x="{_f(x)}" y="{_f(yb + 16)}" font-size="10" text-anchor="middle">{escape(text)}</text>')
        for v in yticks:
            y = self.py(v)
            out.append(f'<line x1="{_f(self.x0 - 4)}" y1="{_f(y)}" x2="{_f(self.x0)}" y2="{_f(y)}" stroke="#333333"/>')
            out.append(f'<line x1="{_f(self.x0)}" y1="{_f(y)}" x2="{_f(self.x0 + self.w)}" y2="{_f(y)}" '
                       f'stroke="#dddddd" stroke-width="0.5"/>')
            out.append(f'<text x="{_f(self.x0 - 7)}" y="{_f(y + 3)}" font-size="10" text-anchor="end">{v:.3f}</text>')
        out.append(f'<text x="{_f(self.x0 + self.w / 2)}" y="{_f(self.y0 + self.h + 34)}" font-size="12" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
        cx, cy = self.x0 - 48, self.y0 + self.h / 2
        out.append(f'<text x="{_f(cx)}" y="{_f(cy)}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 {_f(cx)} {_f(cy)})">{escape(ylabel)}</text>')
        if title:
            out.append(f'<text x="{_f(self.x0 + self.w / 2)}" y="{_f(self.y0 - 8)}" font-size="12" '
                       f'text-anchor="middle">{escape(title)}</text>')
        return out

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_f(self.px(x))},{_f(self.py(y))}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def _document(width, height, body):
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>\n'
        + "\n".join(body) + "\n</svg>\n"
    )


def ensemble_svg(curves, t_stars=None, title="ROC-AUC vs number of ensembled models") -> str:
    """Mean ROC-AUC with +-1 std error bars against T, one line per curve.

    The leftmost category is the single-model baseline ("no-DE"); grid values
    follow at evenly spaced positions.  ``t_stars`` maps curve label to T*.
    """
    t_stars = t_stars or {}
    grid = list(curves[0].t_grid)
    cats = ["no-DE"] + [str(t) for t in grid]
    lo = min(min(np.subtract(c.mean_auc, c.std_auc)) for c in curves)
    lo = min(lo, min(c.baseline_mean - c.baseline_std for c in curves))
    hi = max(max(np.add(c.mean_auc, c.std_auc)) for c in curves)
    hi = max(hi, max(c.baseline_mean + c.baseline_std for c in curves))
    fr = _Frame(80, 40, 520, 300, (-0.5, len(cats) - 0.5), _nice_range(lo, hi))
    body = fr.axes("number of models T", "ROC-AUC", list(enumerate(cats)), _ticks(*fr.ylim), title)
    for k, c in enumerate(curves):
        if list(c.t_grid) != grid:
            raise ValueError("all curves must share one T grid")
        color = PALETTE[k % len(PALETTE)]
        means = [c.baseline_mean, *c.mean_auc]
        stds = [c.baseline_std, *c.std_auc]
        xs = np.arange(len(cats)) + (k - (len(curves) - 1) / 2) * 0.08
        body.append(fr.polyline(xs, means, color))
        for x, m, s in zip(xs, means, stds):
            px = fr.px(x)
            body.append(f'<line x1="{_f(px)}" y1="{_f(fr.py(m - s))}" x2="{_f(px)}" y2="{_f(fr.py(m + s))}" '
                        f'stroke="{color}" stroke-width="1"/>')
            body.append(f'<circle cx="{_f(px)}" cy="{_f(fr.py(m))}" r="2.5" fill="{color}"/>')
        ly = fr.y0 + fr.h - 16 * (len(curves) - k)
        body.append(f'<line x1="470" y1="{_f(ly)}" x2="490" y2="{_f(ly)}" stroke="{color}" stroke-width="2"/>')
        label = c.label or f"curve {k}"
        if label in t_stars:
            label += f" (T*={t_stars[label]})"
            tx = fr.px(cats.index(str(t_stars[c.label])))
            body.append(f'<line x1="{_f(tx)}" y1="{_f(fr.y0)}" x2="{_f(tx)}" y2="{_f(fr.y0 + fr.h)}" '
                        f'stroke="{color}" stroke-width="1" stroke-dasharray="4 3"/>')
        body.append(f'<text x="496" y="{_f(ly + 4)}" font-size="11">{escape(label)}</text>')
    return _document(640, 400, body)


def barrier_panels_svg(report, title="ROC-AUC along the linear interpolation path") -> str:
    """2x2 panel of barrier curves, one line per sampled pair."""
    scenarios = [s for s in ("TL_TL", "RI_RI", "TL_TLstar", "RI_RIstar") if s in report.curves]
    all_auc = np.concatenate([c.auc for s in scenarios for c in report.curves[s]])
    ylim = _nice_range(float(all_auc.min()), float(all_auc.max()))
    body = [f'<text x="400" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>']
    for i, s in enumerate(scenarios):
        col, row = i % 2, i // 2
        fr = _Frame(80 + col * 370, 60 + row * 300, 300, 210, (0.0, 1.0), ylim)
        ticks = [(v, f"{v:.1f}") for v in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)]
        med = report.median(s)
        body += fr.axes("λ", "ROC-AUC", ticks, _ticks(*ylim), f"{SCENARIO_TITLES[s]} (median barrier {med:.3f})")
        for c in report.curves[s]:
            body.append(fr.polyline(c.lambdas, c.auc, SCENARIO_COLORS[s], width=1.0))
    return _document(800, 640, body)
