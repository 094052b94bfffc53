"""Self-contained SVG line plots of sweep results: one polyline per
series, +/- 1 std error bars, legend, labeled axes."""

from __future__ import annotations

from pathlib import Path

from .errors import ContractError
from .sweeps import SweepResult

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 150, 40, 55


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def plot_svg(result: SweepResult, path) -> None:
    """Render mean distance vs attacked-view count, one line per series."""
    if not result.cells:
        raise ContractError("cannot plot an empty sweep grid")
    series_ids = sorted({c.series for c in result.cells})
    ks = [c.k for c in result.cells]
    k_lo, k_hi = min(ks), max(ks)
    y_hi = max(c.mean_distance + c.std_distance for c in result.cells)
    y_lo = 0.0
    y_hi = y_hi * 1.05 if y_hi > 0 else 1.0
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(k):
        if k_hi == k_lo:
            return MARGIN_L + plot_w / 2.0
        return MARGIN_L + (k - k_lo) / (k_hi - k_lo) * plot_w

    def sy(v):
        return MARGIN_T + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h

    series_label = "S (source views)" if result.kind == "views" else "patch size (px)"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f"<!-- seed={result.seed} config_hash={result.config_hash} commit={result.commit} -->",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{_escape(result.kind)} sweep: attack distance vs attacked views</text>',
    ]
    # axes
    x0, y0 = MARGIN_L, MARGIN_T + plot_h
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for k in sorted({c.k for c in result.cells}):
        parts.append(f'<line x1="{sx(k):.1f}" y1="{y0}" x2="{sx(k):.1f}" y2="{y0 + 4}" stroke="black"/>')
        parts.append(f'<text x="{sx(k):.1f}" y="{y0 + 17}" text-anchor="middle" font-size="11" '
                     f'font-family="sans-serif">{k}</text>')
    for v in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{x0 - 4}" y1="{sy(v):.1f}" x2="{x0}" y2="{sy(v):.1f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 7}" y="{sy(v) + 4:.1f}" text-anchor="end" font-size="11" '
                     f'font-family="sans-serif">{v:.3g}</text>')
    parts.append(f'<text x="{x0 + plot_w / 2:.1f}" y="{HEIGHT - 14}" text-anchor="middle" '
                 f'font-size="13" font-family="sans-serif">attacked views (k)</text>')
    parts.append(f'<text x="18" y="{MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" font-size="13" '
                 f'font-family="sans-serif" transform="rotate(-90 18 {MARGIN_T + plot_h / 2:.1f})">'
                 f'mean avg-L2 distance</text>')

    for si, series in enumerate(series_ids):
        color = PALETTE[si % len(PALETTE)]
        cells = sorted((c for c in result.cells if c.series == series), key=lambda c: c.k)
        pts = " ".join(f"{sx(c.k):.2f},{sy(c.mean_distance):.2f}" for c in cells)
        for c in cells:  # error bars first so the line sits on top
            xx = sx(c.k)
            parts.append(f'<line x1="{xx:.2f}" y1="{sy(c.mean_distance - c.std_distance):.2f}" '
                         f'x2="{xx:.2f}" y2="{sy(c.mean_distance + c.std_distance):.2f}" '
                         f'stroke="{color}" stroke-width="1" opacity="0.55"/>')
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for c in cells:
            parts.append(f'<circle cx="{sx(c.k):.2f}" cy="{sy(c.mean_distance):.2f}" r="2.6" '
                         f'fill="{color}"/>')
        ly = MARGIN_T + 16 + 18 * si
        lx = MARGIN_L + plot_w + 14
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly}" font-size="12" font-family="sans-serif">'
                     f'{_escape(series_label)} = {series}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
