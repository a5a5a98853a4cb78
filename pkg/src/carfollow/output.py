"""Deterministic CSV and SVG writers.

Numbers are written with 6 significant digits and '.' as the decimal
separator; missing or non-finite values become empty fields. Repeated runs
with the same inputs produce byte-identical files.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from carfollow.dynamics import Trajectory
from carfollow.metrics import MetricsReport
from carfollow.models import KMH

TRAJECTORY_COLUMNS = ("t", "lane", "vehicle_id", "x_m", "v_mps", "a_mps2", "gap_m", "risk_factor", "v_kmh")
SUMMARY_COLUMNS = (
    "model", "r", "scenario", "trial", "spacing_m", "period_s", "throughput_vph",
    "braking_duration_s", "peak_decel_mps2", "iso_window_mps2", "final_spacing_m",
    "spacing_reduction_m", "response_time_s", "status",
)


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if not math.isfinite(x):
        return ""
    out = format(x, ".6g")
    return "0" if out == "-0" else out


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def _mean_or_none(values):
    return None if values is None else float(np.mean(values))


def summary_row(model: str, r, scenario: str, trial, report: MetricsReport, status: str) -> list:
    """One summary line; per-follower tuples are collapsed to their mean."""
    return [
        model, r, scenario, trial,
        report.stabilization_spacing, report.stabilization_period, report.throughput,
        report.braking_duration, report.peak_decel, report.iso_windowed_decel,
        _mean_or_none(report.final_spacing), _mean_or_none(report.spacing_reduction),
        report.response_time, status,
    ]


def trajectory_rows(traj: Trajectory, every: float | None = None):
    """Rows in time order, then lane, then vehicle id; absent vehicles skipped."""
    stride = 1 if every is None else max(1, int(round(every / traj.dt)))
    has_risk = traj.risk is not None and np.isfinite(traj.risk).any()
    for k in range(0, len(traj.t), stride):
        t = traj.t[k]
        for lane in range(traj.x.shape[1]):
            for vid in range(traj.x.shape[2]):
                x = traj.x[k, lane, vid]
                if not np.isfinite(x):
                    continue
                v = traj.v[k, lane, vid]
                risk = traj.risk[k, lane, vid] if has_risk else None
                yield (round(float(t), 9), lane, vid, x, v, traj.a[k, lane, vid],
                       traj.gap[k, lane, vid], risk, v / KMH)


def write_trajectory(path: str | Path, traj: Trajectory, every: float | None = None) -> Path:
    return write_csv(path, TRAJECTORY_COLUMNS, trajectory_rows(traj, every))


# --- SVG line charts -------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step) * step
    out = []
    x = first
    while x <= hi + 1e-9 * step:
        out.append(round(x, 12))
        x += step
    return out


def line_chart(path: str | Path, series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
               title: str = "", xlabel: str = "", ylabel: str = "",
               width: int = 640, height: int = 400) -> Path:
    """Write a standalone SVG with one polyline per (label, xs, ys) series."""
    left, right, top, bottom = 70, 150, 40, 50
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    xs_all = xs_all[np.isfinite(xs_all)]
    ys_all = ys_all[np.isfinite(ys_all)]
    x0, x1 = (float(xs_all.min()), float(xs_all.max())) if xs_all.size else (0.0, 1.0)
    y0, y1 = (float(ys_all.min()), float(ys_all.max())) if ys_all.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        parts.append(f'<line x1="{px(t):.2f}" y1="{top + ph}" x2="{px(t):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(t):.2f}" y="{top + ph + 18}" text-anchor="middle">{fmt(t)}</text>')
    for t in _ticks(y0, y1):
        parts.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" stroke="black"/>')
        parts.append(f'<line x1="{left}" y1="{py(t):.2f}" x2="{left + pw}" y2="{py(t):.2f}" stroke="#ddd"/>')
        parts.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{fmt(t)}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    parts.append(f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 15 {top + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys)
                       if math.isfinite(x) and math.isfinite(y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 12 + 18 * i
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{_esc(label)}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
