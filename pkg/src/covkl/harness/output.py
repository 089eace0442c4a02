"""CSV and SVG writers for experiment tables."""

from __future__ import annotations

import csv
import math
from html import escape
from pathlib import Path

from .experiments import AGGREGATE_RUN, FAILED, RunRecord

CSV_HEADER = ("experiment", "run_index", "grid_value", "estimator",
              "kl_mean", "kl_std_error", "wall_time_ms", "seed")

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_csv(table: list[RunRecord], path: str | Path, *, timing: bool = False) -> Path:
    """Write ``table`` as CSV.

    ``wall_time_ms`` is left empty unless ``timing`` is set, so that reruns
    with the same seed produce byte-identical files.
    """
    if not table:
        raise ValueError("refusing to write an empty table")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in table:
            w.writerow([
                r.experiment, r.run_index, _fmt(r.grid_value), r.estimator,
                _fmt(r.kl_mean), _fmt(r.kl_std_error),
                _fmt(r.wall_time_ms) if timing else "", r.seed,
            ])
    return path


def read_csv(path: str | Path) -> list[RunRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [
            RunRecord(e, int(i), float(g), est, float(m), float(s),
                      float(t) if t else math.nan, int(seed))
            for e, i, g, est, m, s, t, seed in rd
        ]


def _plot_rows(table: list[RunRecord]) -> list[RunRecord]:
    rows = [r for r in table if not r.estimator.startswith(FAILED)]
    agg = [r for r in rows if r.run_index == AGGREGATE_RUN]
    return agg or rows


def emit_svg(table: list[RunRecord], path: str | Path, *, width: int = 640, height: int = 420) -> Path:
    """Line plot of ``kl_mean`` against ``grid_value``, one polyline per estimator.

    Error bars show ``kl_std_error``. The x axis is logarithmic when every grid
    value is positive and they span more than a decade.
    """
    if not table:
        raise ValueError("refusing to plot an empty table")
    rows = [r for r in _plot_rows(table) if math.isfinite(r.grid_value) and math.isfinite(r.kl_mean)]
    if not rows:
        raise ValueError("no finite rows to plot")
    series: dict[str, list[RunRecord]] = {}
    for r in rows:
        series.setdefault(r.estimator, []).append(r)

    xs = [r.grid_value for r in rows]
    logx = min(xs) > 0 and max(xs) / min(xs) > 10
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    errs = [r.kl_std_error if math.isfinite(r.kl_std_error) else 0.0 for r in rows]
    ylo = min(r.kl_mean - e for r, e in zip(rows, errs))
    yhi = max(r.kl_mean + e for r, e in zip(rows, errs))
    xlo, xhi = min(map(tx, xs)), max(map(tx, xs))
    if xhi == xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    left, right, top, bottom = 70, 160, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def px(v):
        return left + (tx(v) - xlo) / (xhi - xlo) * pw

    def py(v):
        return top + (yhi - v) / (yhi - ylo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">'
        f'grid value{" (log scale)" if logx else ""}</text>',
        f'<text x="14" y="{top + ph / 2:.1f}" transform="rotate(-90 14 {top + ph / 2:.1f})" '
        f'text-anchor="middle">KL</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = ylo + frac * (yhi - ylo)
        parts.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
        xv = xlo + frac * (xhi - xlo)
        label = 10**xv if logx else xv
        parts.append(f'<text x="{left + frac * pw:.1f}" y="{top + ph + 16}" '
                     f'text-anchor="middle">{label:.4g}</text>')
    for k, (name, rs) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        rs = sorted(rs, key=lambda r: r.grid_value)
        pts = " ".join(f"{px(r.grid_value):.2f},{py(r.kl_mean):.2f}" for r in rs)
        if len(rs) > 1:
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        for r in rs:
            x, y = px(r.grid_value), py(r.kl_mean)
            e = r.kl_std_error if math.isfinite(r.kl_std_error) else 0.0
            if e > 0:
                parts.append(f'<line x1="{x:.2f}" y1="{py(r.kl_mean - e):.2f}" x2="{x:.2f}" '
                             f'y2="{py(r.kl_mean + e):.2f}" stroke="{color}"/>')
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>')
        ly = top + 14 * (k + 1)
        parts.append(f'<line x1="{width - right + 10}" y1="{ly - 4}" x2="{width - right + 28}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - right + 32}" y="{ly}">{escape(name)}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path
