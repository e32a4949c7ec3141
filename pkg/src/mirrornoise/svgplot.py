"""Deterministic SVG line charts from CSV tables."""

from __future__ import annotations

import csv
import io
import math

from .errors import InvalidInputError

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 80, 20, 30, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def read_csv_table(text: str) -> tuple[list[str], list[list[float]]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InvalidInputError("empty CSV")
    header = [h.strip() for h in rows[0]]
    body = []
    for i, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(header):
            raise InvalidInputError(f"CSV line {i}: expected {len(header)} fields, got {len(r)}")
        try:
            body.append([float(v) for v in r])
        except ValueError:
            raise InvalidInputError(f"CSV line {i}: non-numeric field") from None
    return header, body


def _fmt(v: float) -> str:
    # fixed precision keeps output bytes stable across platforms
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.4g}"


class _Axis:
    def __init__(self, values, log: bool, lo_px: float, hi_px: float, name: str):
        vals = [v for v in values if math.isfinite(v)]
        if log:
            vals = [v for v in vals if v > 0]
            if not vals:
                raise InvalidInputError(f"log axis {name!r} has no positive values")
        if not vals:
            raise InvalidInputError(f"axis {name!r} has no finite values")
        self.log = log
        lo, hi = min(vals), max(vals)
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi == lo:
            pad = abs(lo) * 0.05 or 1.0
            lo, hi = lo - pad, hi + pad
        self.lo, self.hi = lo, hi
        self.lo_px, self.hi_px = lo_px, hi_px

    def t(self, v: float) -> float | None:
        if not math.isfinite(v) or (self.log and v <= 0):
            return None
        u = math.log10(v) if self.log else v
        return self.lo_px + (u - self.lo) / (self.hi - self.lo) * (self.hi_px - self.lo_px)

    def ticks(self) -> list[float]:
        if self.log:
            first, last = math.floor(self.lo + 1e-12), math.ceil(self.hi - 1e-12)
            out = [10.0 ** k for k in range(first, last + 1)
                   if self.lo - 1e-9 <= k <= self.hi + 1e-9]
            return out or [10.0 ** round((self.lo + self.hi) / 2)]
        span = self.hi - self.lo
        step = 10.0 ** math.floor(math.log10(span / 5))
        for m in (1, 2, 5, 10):
            if span / (step * m) <= 6:
                step *= m
                break
        k = math.ceil(self.lo / step - 1e-9)
        out = []
        while k * step <= self.hi + 1e-9 * step:
            out.append(k * step)
            k += 1
        return out


def emit_svg(header, rows, x: str, ys, logx: bool = False, logy: bool = False,
             title: str = "") -> str:
    """Self-contained SVG with one polyline per y column."""
    ys = [ys] if isinstance(ys, str) else list(ys)
    for col in [x, *ys]:
        if col not in header:
            raise InvalidInputError(f"no column {col!r} in table")
    if len(rows) < 2:
        raise InvalidInputError("a plot needs at least 2 rows")
    ix = header.index(x)
    iys = [header.index(c) for c in ys]
    xa = _Axis([r[ix] for r in rows], logx, LEFT, WIDTH - RIGHT, x)
    ya = _Axis([r[i] for r in rows for i in iys], logy, HEIGHT - BOTTOM, TOP, ",".join(ys))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{WIDTH - LEFT - RIGHT}" '
        f'height="{HEIGHT - TOP - BOTTOM}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle">{_esc(title)}</text>')
    for v in xa.ticks():
        px = xa.t(v)
        out.append(f'<line x1="{_fmt(px)}" y1="{TOP}" x2="{_fmt(px)}" y2="{HEIGHT - BOTTOM}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{_fmt(px)}" y="{HEIGHT - BOTTOM + 15}" '
                   f'text-anchor="middle">{_label(v)}</text>')
    for v in ya.ticks():
        py = ya.t(v)
        out.append(f'<line x1="{LEFT}" y1="{_fmt(py)}" x2="{WIDTH - RIGHT}" y2="{_fmt(py)}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 5}" y="{_fmt(py + 4)}" '
                   f'text-anchor="end">{_label(v)}</text>')
    out.append(f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.1f}" y="{HEIGHT - 12}" '
               f'text-anchor="middle">{_esc(x)}</text>')
    for n, (col, iy) in enumerate(zip(ys, iys)):
        pts = []
        for r in rows:
            px, py = xa.t(r[ix]), ya.t(r[iy])
            if px is not None and py is not None:
                pts.append(f"{_fmt(px)},{_fmt(py)}")
        color = COLORS[n % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{" ".join(pts)}"/>')
        out.append(f'<text x="{LEFT + 8}" y="{TOP + 16 + 14 * n}" fill="{color}">'
                   f'{_esc(col)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
