"""Deterministic SVG figures, no rendering dependency.

Fixed canvas, monospace fonts, and pinned numeric printing (losses at 6
significant digits, percentages at 2 decimals) keep output byte-stable so
figures can be golden-tested and diffed.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

WIDTH, HEIGHT = 720, 480
MARGIN = 70
FONT = "font-family=\"monospace\" font-size=\"12\""
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class ReportError(Exception):
    pass


def fmt_loss(x: float) -> str:
    return f"{x:.6g}"


def fmt_percent(x: float) -> str:
    return f"{x:.2f}"


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


class _Scale:
    def __init__(self, lo: float, hi: float, out_lo: float, out_hi: float, log: bool):
        if log and (lo <= 0 or hi <= 0):
            raise ReportError("log scale requires positive data")
        self.log = log
        self.lo, self.hi = (math.log10(lo), math.log10(hi)) if log else (lo, hi)
        if self.hi == self.lo:
            self.hi = self.lo + 1.0
        self.out_lo, self.out_hi = out_lo, out_hi

    def __call__(self, x: float) -> float:
        v = math.log10(x) if self.log else x
        frac = (v - self.lo) / (self.hi - self.lo)
        return self.out_lo + frac * (self.out_hi - self.out_lo)

    def ticks(self) -> List[float]:
        if self.log:
            return [10.0 ** e for e in range(math.floor(self.lo), math.ceil(self.hi) + 1)]
        span = self.hi - self.lo
        step = 10 ** math.floor(math.log10(span / 4)) if span > 0 else 1.0
        if span / step > 8:
            step *= 2
        start = math.ceil(self.lo / step) * step
        out = []
        t = start
        while t <= self.hi + 1e-12:
            out.append(t)
            t += step
        return out


class SvgCanvas:
    def __init__(self, title: str, config_digest: str = "", tool_version: str = ""):
        self.parts: List[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
            f"<!-- config_digest={config_digest} tool_version={tool_version} -->",
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" {FONT} '
            f'font-size="15">{_escape(title)}</text>',
        ]

    def line(self, x1, y1, x2, y2, color="#333", width=1.0, dash=""):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{color}" stroke-width="{width}"{d}/>'
        )

    def polyline(self, points: Sequence[Tuple[float, float]], color: str):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )

    def circle(self, x, y, r, color):
        self.parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{color}"/>'
        )

    def diamond(self, x, y, r, color):
        pts = f"{x:.2f},{y - r:.2f} {x + r:.2f},{y:.2f} {x:.2f},{y + r:.2f} {x - r:.2f},{y:.2f}"
        self.parts.append(
            f'<polygon points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )

    def rect(self, x, y, w, h, color, title: Optional[str] = None):
        t = f"<title>{_escape(title)}</title>" if title else ""
        self.parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
            f'fill="{color}" stroke="#333" stroke-width="0.5">{t}</rect>'
            if t
            else f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
            f'fill="{color}" stroke="#333" stroke-width="0.5"/>'
        )

    def text(self, x, y, s, anchor="middle", size=12, rotate: Optional[float] = None):
        r = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" text-anchor="{anchor}" {FONT} '
            f'font-size="{size}"{r}>{_escape(s)}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"])


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _axes(canvas: SvgCanvas, xs: _Scale, ys: _Scale, xlabel: str, ylabel: str):
    canvas.line(MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN)
    canvas.line(MARGIN, MARGIN, MARGIN, HEIGHT - MARGIN)
    for t in xs.ticks():
        x = xs(t)
        if not MARGIN - 1 <= x <= WIDTH - MARGIN + 1:
            continue
        canvas.line(x, HEIGHT - MARGIN, x, HEIGHT - MARGIN + 5)
        label = f"1e{int(math.log10(t))}" if xs.log else _fmt(t)
        canvas.text(x, HEIGHT - MARGIN + 20, label)
    for t in ys.ticks():
        y = ys(t)
        if not MARGIN - 1 <= y <= HEIGHT - MARGIN + 1:
            continue
        canvas.line(MARGIN - 5, y, MARGIN, y)
        label = f"1e{int(math.log10(t))}" if ys.log else fmt_loss(t)
        canvas.text(MARGIN - 8, y + 4, label, anchor="end", size=10)
    canvas.text(WIDTH / 2, HEIGHT - 14, xlabel)
    canvas.text(18, HEIGHT / 2, ylabel, rotate=-90.0)


def scaling_curves_svg(
    series: Dict[str, dict],
    xlabel: str,
    title: str = "Scaling curves",
    config_digest: str = "",
    tool_version: str = "",
) -> str:
    """Log-log fit curves with dot markers for fit points and diamond
    markers for holdout points.

    series: name -> {"curve": [(x, yhat)], "fit_points": [(x, y)],
                     "holdout_points": [(x, y)]}
    """
    if not series:
        raise ReportError("no series")
    all_x, all_y = [], []
    for s in series.values():
        for key in ("curve", "fit_points", "holdout_points"):
            for x, y in s.get(key, []):
                all_x.append(x)
                all_y.append(y)
    if not all_x:
        raise ReportError("series contain no points")
    xs = _Scale(min(all_x), max(all_x), MARGIN, WIDTH - MARGIN, log=True)
    ys = _Scale(min(all_y) * 0.95, max(all_y) * 1.05, HEIGHT - MARGIN, MARGIN, log=True)
    canvas = SvgCanvas(title, config_digest, tool_version)
    _axes(canvas, xs, ys, xlabel, "loss (nats)")
    for i, (name, s) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        if s.get("curve"):
            canvas.polyline([(xs(x), ys(y)) for x, y in s["curve"]], color)
        for x, y in s.get("fit_points", []):
            canvas.circle(xs(x), ys(y), 3, color)
        for x, y in s.get("holdout_points", []):
            canvas.diamond(xs(x), ys(y), 5, color)
        canvas.text(WIDTH - MARGIN, MARGIN + 16 * i + 8, name, anchor="end", size=11)
        canvas.line(
            WIDTH - MARGIN - 150, MARGIN + 16 * i + 4,
            WIDTH - MARGIN - 120, MARGIN + 16 * i + 4, color=color, width=2,
        )
    return canvas.render()


def bar_chart_svg(
    values: Sequence[Tuple[str, float]],
    title: str,
    ylabel: str,
    sort_ascending: bool = True,
    config_digest: str = "",
    tool_version: str = "",
) -> str:
    """Linear bar chart; value labels carry the pinned loss precision."""
    if not values:
        raise ReportError("no bars")
    rows = sorted(values, key=lambda kv: kv[1]) if sort_ascending else list(values)
    ymax = max(v for _, v in rows)
    ys = _Scale(0.0, ymax * 1.1, HEIGHT - MARGIN, MARGIN, log=False)
    canvas = SvgCanvas(title, config_digest, tool_version)
    span = WIDTH - 2 * MARGIN
    bw = span / len(rows) * 0.7
    gap = span / len(rows)
    canvas.line(MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN)
    canvas.line(MARGIN, MARGIN, MARGIN, HEIGHT - MARGIN)
    for i, (name, v) in enumerate(rows):
        x = MARGIN + i * gap + (gap - bw) / 2
        y = ys(v)
        canvas.rect(x, y, bw, HEIGHT - MARGIN - y, PALETTE[0])
        canvas.text(x + bw / 2, y - 6, fmt_loss(v), size=10)
        canvas.text(x + bw / 2, HEIGHT - MARGIN + 16, name, size=10)
    canvas.text(18, HEIGHT / 2, ylabel, rotate=-90.0)
    return canvas.render()


def heatmap_svg(
    cells: Dict[Tuple[int, int], float],
    title: str = "Best-found synthetic ratio",
    config_digest: str = "",
    tool_version: str = "",
) -> str:
    """best_ratio over (n_capacity, d_budget); cell text is the ratio as a
    percentage at 2 decimals."""
    if not cells:
        raise ReportError("no cells")
    ns = sorted({n for n, _ in cells})
    ds = sorted({d for _, d in cells})
    canvas = SvgCanvas(title, config_digest, tool_version)
    gw = (WIDTH - 2 * MARGIN) / len(ds)
    gh = (HEIGHT - 2 * MARGIN) / len(ns)
    vmax = max(cells.values()) or 1.0
    for i, n in enumerate(ns):
        for j, d in enumerate(ds):
            if (n, d) not in cells:
                continue
            v = cells[(n, d)]
            shade = int(255 - 180 * (v / vmax))
            color = f"rgb({shade},{shade},255)"
            x = MARGIN + j * gw
            y = HEIGHT - MARGIN - (i + 1) * gh
            canvas.rect(x, y, gw, gh, color)
            canvas.text(x + gw / 2, y + gh / 2 + 4, fmt_percent(100 * v) + "%", size=11)
    for j, d in enumerate(ds):
        canvas.text(MARGIN + (j + 0.5) * gw, HEIGHT - MARGIN + 18, f"D={d}", size=10)
    for i, n in enumerate(ns):
        canvas.text(
            MARGIN - 8, HEIGHT - MARGIN - (i + 0.5) * gh + 4, f"N={n}",
            anchor="end", size=10,
        )
    return canvas.render()


def zipf_svg(
    points: Sequence[Tuple[int, int]],
    fit_exponent: float,
    fit_intercept: float,
    label: str = "",
    config_digest: str = "",
    tool_version: str = "",
) -> str:
    """Log-log rank/count scatter with the fitted power law overlaid."""
    if not points:
        raise ReportError("no points")
    xs = _Scale(1, max(r for r, _ in points), MARGIN, WIDTH - MARGIN, log=True)
    ys = _Scale(
        max(1e-12, min(c for _, c in points)), max(c for _, c in points),
        HEIGHT - MARGIN, MARGIN, log=True,
    )
    title = f"Zipf fit {label} (s={fmt_loss(fit_exponent)})".strip()
    canvas = SvgCanvas(title, config_digest, tool_version)
    _axes(canvas, xs, ys, "rank", "count")
    for r, c in points:
        canvas.circle(xs(r), ys(c), 1.5, PALETTE[0])
    curve = []
    for r, _ in points:
        pred = math.exp(fit_intercept - fit_exponent * math.log(r))
        curve.append((xs(r), ys(max(pred, 1e-12))))
    canvas.polyline(curve, PALETTE[1])
    return canvas.render()


def token_loss_svg(
    records: Sequence[Tuple[int, float]],
    rolling: Sequence[Tuple[int, float]],
    title: str = "Per-token loss",
    config_digest: str = "",
    tool_version: str = "",
) -> str:
    """Per-token loss dots with the rolling-average curve."""
    if not records:
        raise ReportError("no records")
    xs = _Scale(
        min(p for p, _ in records), max(p for p, _ in records),
        MARGIN, WIDTH - MARGIN, log=False,
    )
    ymax = max(l for _, l in records)
    ys = _Scale(0.0, ymax * 1.05 if ymax > 0 else 1.0, HEIGHT - MARGIN, MARGIN, log=False)
    canvas = SvgCanvas(title, config_digest, tool_version)
    _axes(canvas, xs, ys, "position", "loss (nats)")
    for p, l in records:
        canvas.circle(xs(p), ys(l), 1.2, "#bbbbbb")
    canvas.polyline([(xs(p), ys(l)) for p, l in rolling], PALETTE[1])
    return canvas.render()


def write_svg(svg: str, path: str | Path) -> None:
    Path(path).write_text(svg + "\n")
