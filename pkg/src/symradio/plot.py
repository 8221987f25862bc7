"""Minimal self-contained SVG line plots for the experiment CSVs.

Each series is the mean of ``y`` over trials at every ``x`` value and becomes
one ``<polyline>``, or one ``<circle>`` when it has a single point.  No plotting library is needed, so the output is stable
byte for byte across machines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass(frozen=True)
class AxesSpec:
    x: str
    y: str
    series: tuple = ("method",)
    xlabel: str = ""
    ylabel: str = ""
    log_y: bool = False
    title: str = ""


DEFAULT_AXES = {
    "rate_sweep": AxesSpec("C_bps_hz", "E_T_dB", ("method",), "rate target C (bits/s/Hz)", "E_T (dB re 1 J)"),
    "m_sweep": AxesSpec("C_bps_hz", "E_T_dB", ("method", "M"), "rate target C (bits/s/Hz)", "E_T (dB re 1 J)"),
    "antenna_sweep": AxesSpec("C_bps_hz", "E_T_dB", ("method", "N"), "rate target C (bits/s/Hz)",
                              "E_T (dB re 1 J)"),
    "location_study": AxesSpec("C_bps_hz", "E_T_dB", ("experiment",), "rate target C (bits/s/Hz)",
                               "E_T (dB re 1 J)"),
    "tdma_compare": AxesSpec("C_bps_hz", "E_T_dB", ("method",), "rate target C (bits/s/Hz)", "E_T (dB re 1 J)"),
    "convergence": AxesSpec("iteration", "E_T_dB", ("method", "trial"), "iteration", "E_T (dB re 1 J)"),
    "complexity": AxesSpec("I", "flops", ("method",), "number of devices I", "operations", log_y=True),
    "iot_ee": AxesSpec("SE_bps_hz", "EE_bits_per_J", ("protocol",), "spectral efficiency (bits/s/Hz)",
                       "energy efficiency (bits/J)", log_y=True),
}


def default_axes(experiment: str) -> AxesSpec:
    try:
        return DEFAULT_AXES[experiment]
    except KeyError:
        raise ValueError(f"no default axes for experiment {experiment!r}") from None


def _record(row) -> Mapping:
    return row.record() if hasattr(row, "record") else row


def series_points(rows: Sequence, axes: AxesSpec) -> dict[str, list[tuple[float, float]]]:
    """Group rows into series and average finite ``y`` values per ``x``."""
    buckets: dict[str, dict[float, list[float]]] = {}
    for row in rows:
        rec = _record(row)
        name = " ".join(f"{k}={rec[k]}" if k not in ("method", "protocol", "experiment") else str(rec[k])
                        for k in axes.series)
        y = float(rec[axes.y])
        if not math.isfinite(y) or (axes.log_y and y <= 0):
            continue
        buckets.setdefault(name, {}).setdefault(float(rec[axes.x]), []).append(y)
    return {name: sorted((x, float(np.mean(ys))) for x, ys in pts.items()) for name, pts in buckets.items()}


def render_svg(series: Mapping[str, Sequence[tuple[float, float]]], axes: AxesSpec,
               width: int = 640, height: int = 420) -> str:
    if not series:
        raise ValueError("nothing to plot")
    for name, pts in series.items():
        if not pts:
            raise ValueError(f"series {name!r} is empty")
    left, right, top, bottom = 80, 170, 30, 55
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    fy = math.log10 if axes.log_y else (lambda v: v)
    x0, x1 = min(xs), max(xs)
    y0, y1 = fy(min(ys)), fy(max(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (fy(y) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        ylab = f"1e{yv:.1f}" if axes.log_y else f"{yv:.3g}"
        out.append(f'<text x="{px(xv):.2f}" y="{top + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
        ypix = top + ph - k / 4 * ph
        out.append(f'<text x="{left - 6}" y="{ypix + 4:.2f}" text-anchor="end">{ylab}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(axes.xlabel or axes.x)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(axes.ylabel or axes.y)}</text>')
    if axes.title:
        out.append(f'<text x="{left + pw / 2:.1f}" y="18" text-anchor="middle">{escape(axes.title)}</text>')
    for k, (name, pts) in enumerate(sorted(series.items())):
        colour = PALETTE[k % len(PALETTE)]
        if len(pts) == 1:
            # a one-point sweep gets a marker, since a polyline needs two vertices
            (x, y), = pts
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="4" fill="{colour}">'
                       f'<title>{escape(name)}</title></circle>')
        else:
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{coords}">'
                       f'<title>{escape(name)}</title></polyline>')
        ly = top + 14 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(rows: Sequence, axes: AxesSpec, path) -> str:
    """Write one SVG with a polyline per series (a marker for one-point series)."""
    svg = render_svg(series_points(rows, axes), axes)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return str(path)
