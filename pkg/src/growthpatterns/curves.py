"""Growth-pattern curves, percentile growth charts, and their CSV/SVG rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from growthpatterns.agreement import OrderedClustering
from growthpatterns.cohort import RETAINED_VISITS, AttributeKind, TrajectoryMatrix
from growthpatterns.errors import DataError

DEFAULT_PERCENTILES = (90.0, 75.0, 50.0, 25.0, 10.0)
CHART_KINDS = ("growth_pattern", "percentile", "overlay")
STYLES = ("solid", "dashed")
CSV_HEADER = ("series_label", "visit", "mean_age_months", "mean_value", "n_children")

SVG_WIDTH, SVG_HEIGHT = 800, 500
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


@dataclass(frozen=True)
class CurveSeries:
    label: str
    x: np.ndarray
    y: np.ndarray
    n_children: int
    style: str = "solid"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise DataError(f"series {self.label!r}: x and y must be 1-D of equal length")
        if np.any(np.diff(x) <= 0):
            raise DataError(f"series {self.label!r}: mean ages must be strictly increasing")
        if self.style not in STYLES:
            raise DataError(f"unknown style {self.style!r}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class CurveChart:
    attribute: AttributeKind
    kind: str
    series: tuple[CurveSeries, ...] = ()
    visits: tuple[int, ...] = RETAINED_VISITS

    def __post_init__(self):
        object.__setattr__(self, "attribute", AttributeKind(self.attribute))
        object.__setattr__(self, "series", tuple(self.series))
        if self.kind not in CHART_KINDS:
            raise DataError(f"unknown chart kind {self.kind!r}")
        for s in self.series:
            if s.x.size != len(self.visits):
                raise DataError(f"series {s.label!r} has {s.x.size} points, chart has {len(self.visits)} visits")


def mean_curve(matrix: TrajectoryMatrix, child_ids: Iterable[str], label: str, style: str = "solid") -> CurveSeries:
    """Per-visit mean value against per-visit mean age over the given children."""
    sub = matrix.subset(child_ids)
    return CurveSeries(label, sub.ages.mean(axis=0), sub.values.mean(axis=0), sub.n_children, style)


def growth_pattern_curves(
    matrix: TrajectoryMatrix, clustering: OrderedClustering, style: str = "solid"
) -> CurveChart:
    """One series per level, bottom-most first; level ``i`` is labelled ``C{i+1}``."""
    if set(clustering.child_ids) != set(matrix.child_ids):
        raise DataError("clustering does not cover exactly the matrix's children")
    levels = clustering.aligned(matrix.child_ids)
    series = []
    for level in range(clustering.k):
        rows = levels == level
        if not rows.any():
            raise DataError(f"level {level} has no children")
        series.append(
            CurveSeries(
                f"C{level + 1}",
                matrix.ages[rows].mean(axis=0),
                matrix.values[rows].mean(axis=0),
                int(rows.sum()),
                style,
            )
        )
    return CurveChart(matrix.attribute, "growth_pattern", tuple(series), matrix.visits)


def upper_tail_mean(values, percentile: float) -> float:
    """Mean of the values at or above the ``percentile``-th percentile.

    The percentile uses linear interpolation at zero-based rank p/100*(n-1).
    """
    values = np.asarray(values, dtype=float)
    threshold = np.percentile(values, percentile, method="linear")
    return float(values[values >= threshold].mean())


def percentile_curves(matrix: TrajectoryMatrix, percentiles: Sequence[float] = DEFAULT_PERCENTILES) -> CurveChart:
    """Traditional chart: at each visit, average the children at or above each percentile."""
    if matrix.n_children < 2:
        raise DataError("percentile curves need at least two children")
    series = []
    for p in percentiles:
        if not 0 < p < 100:
            raise DataError(f"percentile {p} outside (0, 100)")
        y = [upper_tail_mean(matrix.values[:, j], p) for j in range(matrix.values.shape[1])]
        series.append(CurveSeries(f"P{p:g}", matrix.visit_mean_ages, np.array(y), matrix.n_children))
    return CurveChart(matrix.attribute, "percentile", tuple(series), matrix.visits)


def overlay_series(chart: CurveChart, extra: CurveSeries, style: str = "solid") -> CurveChart:
    if extra.x.size != len(chart.visits):
        raise DataError(f"overlay has {extra.x.size} points, chart has {len(chart.visits)} visits")
    return CurveChart(chart.attribute, "overlay", chart.series + (replace(extra, style=style),), chart.visits)


def _num(v: float) -> str:
    return repr(float(v))


def render_csv(chart: CurveChart) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in chart.series:
        for visit, x, y in zip(chart.visits, s.x, s.y):
            writer.writerow([s.label, visit, _num(x), _num(y), s.n_children])
    return buf.getvalue().encode("utf-8")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(t) for t in np.arange(start, hi + step * 1e-9, step)]


def render_svg(chart: CurveChart) -> bytes:
    left, right, top, bottom = 70, 150, 40, 60
    pw, ph = SVG_WIDTH - left - right, SVG_HEIGHT - top - bottom
    xs = np.concatenate([s.x for s in chart.series])
    ys = np.concatenate([s.y for s in chart.series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    title = {
        "growth_pattern": "Growth-pattern curves",
        "percentile": "Percentile growth chart",
        "overlay": "Growth-pattern curves with overlay",
    }[chart.kind]
    unit = chart.attribute.units
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">'
        f"{escape(title)} ({escape(chart.attribute.value)})</text>",
        f'<g stroke="black" stroke-width="1"><line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>'
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>',
    ]
    for t in _ticks(x0, x1):
        out.append(
            f'<text x="{px(t):.2f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{t:g}</text>'
        )
    for t in _ticks(y0, y1):
        out.append(
            f'<text x="{left - 6}" y="{py(t) + 4:.2f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11">{t:g}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{SVG_HEIGHT - 15}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">Mean age (months)</text>'
    )
    out.append(
        f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(chart.attribute.value.capitalize())} '
        f"({escape(unit)})</text>"
    )
    for i, s in enumerate(chart.series):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(s.x, s.y))
        dash = ' stroke-dasharray="6,4"' if s.style == "dashed" else ""
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{points}">'
            f"<title>{escape(s.label)} (n={s.n_children})</title></polyline>"
        )
        ly = top + 10 + 18 * i
        out.append(
            f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 36}" y2="{ly}" stroke="{color}" '
            f'stroke-width="2"{dash}/>'
        )
        out.append(
            f'<text x="{left + pw + 42}" y="{ly + 4}" font-family="sans-serif" font-size="11">'
            f"{escape(s.label)} (n={s.n_children})</text>"
        )
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")


def render_chart(chart: CurveChart, format: str = "csv") -> bytes:
    if not chart.series:
        raise DataError("cannot render an empty chart")
    if format == "csv":
        return render_csv(chart)
    if format == "svg":
        return render_svg(chart)
    raise DataError(f"unsupported chart format {format!r}; use csv or svg")
