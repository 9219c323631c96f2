"""Standalone SVG log-log plots of scaling series."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from lrpnet.estimation import fit_exponent


class ParseError(ValueError):
    pass


class PlotRefused(ValueError):
    pass


@dataclass(frozen=True)
class SeriesPoint:
    n: float
    mean: float
    lo: float
    hi: float


REQUIRED = ("n", "mean", "ci_lo", "ci_hi")


def parse_series(text: str) -> tuple[list[SeriesPoint], list[SeriesPoint]]:
    """Primary and optional secondary series from CSV text."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise PlotRefused("series file is empty") from None
    header = [h.strip() for h in header]
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise ParseError(f"line 1: missing columns {', '.join(missing)}")
    col = {h: k for k, h in enumerate(header)}
    has2 = all(c in col for c in ("mean2", "ci_lo2", "ci_hi2"))
    first, second = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not x.strip() for x in row):
            continue
        try:
            vals = {h: row[k].strip() for h, k in col.items() if k < len(row)}
            p = SeriesPoint(float(vals["n"]), float(vals["mean"]), float(vals["ci_lo"]), float(vals["ci_hi"]))
        except (KeyError, ValueError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        if not (p.n > 0 and p.mean > 0):
            raise ParseError(f"line {lineno}: n and mean must be positive for a log-log plot")
        first.append(p)
        if has2 and vals.get("mean2"):
            try:
                second.append(SeriesPoint(p.n, float(vals["mean2"]), float(vals["ci_lo2"]), float(vals["ci_hi2"])))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
    return first, second


_W, _H = 640, 440
_L, _R, _T, _B = 70, 20, 30, 60
_COLORS = ("#1f5fa8", "#c0392b")


def render_svg(first: list[SeriesPoint], second: list[SeriesPoint] = (), title: str = "") -> tuple[str, float]:
    """SVG text and the fitted slope of the primary series."""
    if not first:
        raise PlotRefused("no data points to plot")
    if len(first) < 2:
        raise PlotRefused("at least two points are needed for a fit")
    fit = fit_exponent([p.n for p in first], [p.mean for p in first], min_scales=2)
    pts = list(first) + list(second)
    xs = [math.log10(p.n) for p in pts]
    ys = [math.log10(max(v, 1e-300)) for p in pts for v in (p.mean, p.lo if p.lo > 0 else p.mean, p.hi)]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    padx, pady = 0.05 * (x1 - x0), 0.08 * (y1 - y0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def X(n):
        return _L + (math.log10(n) - x0) / (x1 - x0) * (_W - _L - _R)

    def Y(v):
        v = max(v, 10 ** y0)
        return _H - _B - (math.log10(v) - y0) / (y1 - y0) * (_H - _T - _B)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line class="axis" x1="{_L}" y1="{_H - _B}" x2="{_W - _R}" y2="{_H - _B}" stroke="black"/>',
        f'<line class="axis" x1="{_L}" y1="{_T}" x2="{_L}" y2="{_H - _B}" stroke="black"/>',
    ]
    for k in range(math.ceil(x0), math.floor(x1) + 1):
        out.append(f'<text x="{X(10 ** k):.2f}" y="{_H - _B + 18}" font-size="12" text-anchor="middle">1e{k}</text>')
    for k in range(math.ceil(y0), math.floor(y1) + 1):
        out.append(f'<text x="{_L - 8}" y="{Y(10 ** k) + 4:.2f}" font-size="12" text-anchor="end">1e{k}</text>')
    out.append(f'<text x="{(_L + _W - _R) / 2}" y="{_H - 15}" font-size="13" text-anchor="middle">n</text>')
    if title:
        out.append(f'<text x="{(_L + _W - _R) / 2}" y="18" font-size="14" text-anchor="middle">{title}</text>')
    for series, color in ((first, _COLORS[0]), (second, _COLORS[1])):
        for p in series:
            if p.lo > 0:
                out.append(f'<line class="errorbar" x1="{X(p.n):.2f}" y1="{Y(p.lo):.2f}" '
                           f'x2="{X(p.n):.2f}" y2="{Y(p.hi):.2f}" stroke="{color}"/>')
            out.append(f'<circle class="marker" cx="{X(p.n):.2f}" cy="{Y(p.mean):.2f}" r="4" fill="{color}"/>')
    na, nb = first[0].n, first[-1].n
    ya = math.exp(fit.intercept) * na ** fit.delta_hat
    yb = math.exp(fit.intercept) * nb ** fit.delta_hat
    out.append(f'<line class="fit" x1="{X(na):.2f}" y1="{Y(ya):.2f}" x2="{X(nb):.2f}" y2="{Y(yb):.2f}" '
               f'stroke="{_COLORS[0]}" stroke-dasharray="6 4"/>')
    out.append(f'<text class="annotation" x="{_L + 12}" y="{_T + 16}" font-size="13">'
               f'slope = {fit.delta_hat:.4f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n", fit.delta_hat
