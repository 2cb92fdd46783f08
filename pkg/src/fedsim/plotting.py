"""Dependency-free SVG line charts with a log-scale y axis and min-max bands."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .objectives import ConfigurationError

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=30, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
ZERO_FLOOR = 1e-30  # stand-in for exact zeros, which have no logarithm


@dataclass(frozen=True)
class Series:
    label: str
    rounds: np.ndarray
    center: np.ndarray
    low: np.ndarray
    high: np.ndarray


def read_series(path, metric: str = "gap", label: str | None = None) -> Series:
    """Read an aggregate CSV (median/min/max columns) or a single-run trace CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigurationError(f"{path}: CSV has no data rows")
    cols = rows[0].keys()
    r = np.array([int(row["round"]) for row in rows])
    if f"median_{metric}" in cols:
        get = lambda k: np.array([float(row[f"{k}_{metric}"]) for row in rows])
        c, lo, hi = get("median"), get("min"), get("max")
    elif metric in cols:
        c = np.array([float(row[metric]) for row in rows])
        lo = hi = c
    else:
        raise ConfigurationError(f"{path}: no column for metric {metric!r}")
    return Series(label or Path(path).stem, r, c, lo, hi)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _decades(series):
    vals = np.concatenate([np.concatenate([s.low, s.center, s.high]) for s in series])
    pos = vals[np.isfinite(vals) & (vals > 0)]
    lo = pos.min() if pos.size else ZERO_FLOOR
    hi = pos.max() if pos.size else 1.0
    lo = min(lo, ZERO_FLOOR) if np.any(vals <= 0) else lo
    d0, d1 = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if d1 == d0:
        d1 += 1
    return d0, d1


def render_svg(series, title: str = "", ylabel: str = "gap", xlabel: str = "round") -> str:
    series = list(series)
    if not series or any(s.rounds.size == 0 for s in series):
        raise ConfigurationError("nothing to plot")
    d0, d1 = _decades(series)
    x0 = min(int(s.rounds.min()) for s in series)
    x1 = max(int(s.rounds.max()) for s in series)
    x1 = x1 if x1 > x0 else x0 + 1
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(r):
        return MARGIN["left"] + (r - x0) / (x1 - x0) * pw

    def py(v):
        v = np.maximum(np.asarray(v, dtype=np.float64), 10.0**d0)
        return MARGIN["top"] + (d1 - np.log10(v)) / (d1 - d0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>')
    left, bottom = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line x1="{left}" y1="{MARGIN["top"]}" x2="{left}" y2="{bottom}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{bottom}" x2="{left + pw}" y2="{bottom}" stroke="black"/>')
    step = max(1, (d1 - d0 + 7) // 8)
    for d in range(d0, d1 + 1, step):
        y = _fmt(float(py(10.0**d)))
        out.append(f'<line x1="{left - 4}" y1="{y}" x2="{left}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">1e{d}</text>')
    for t in np.linspace(x0, x1, 5):
        x = _fmt(px(t))
        out.append(f'<line x1="{x}" y1="{bottom}" x2="{x}" y2="{bottom + 4}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{bottom + 16}" text-anchor="middle">{int(round(t))}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.2f})">{_esc(ylabel)} (log scale)</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        xs = [px(r) for r in s.rounds]
        hi, lo, c = py(s.high), py(s.low), py(s.center)
        band = [f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, hi)]
        band += [f"{_fmt(x)},{_fmt(y)}" for x, y in zip(reversed(xs), lo[::-1])]
        out.append(f'<polygon points="{" ".join(band)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, c))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 12 + 18 * i
        lx = WIDTH - MARGIN["right"] + 10
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{_esc(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def plot_files(paths, out_path=None, metric: str = "gap", title: str = "", labels=None) -> str:
    paths = list(paths)
    labels = labels or [None] * len(paths)
    svg = render_svg([read_series(p, metric, lab) for p, lab in zip(paths, labels)],
                     title=title, ylabel=metric)
    if out_path is not None:
        Path(out_path).write_text(svg)
    return svg
