"""Self-contained SVG box plots of per-chip accuracy distributions."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .evaluate import EvalReport

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c")

BOX_W = 34
GAP = 14
GROUP_GAP = 60
LEFT = 70
TOP = 40
PLOT_H = 320
BRACKET_STEP = 16


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"


def box_plot_svg(report: EvalReport, title: str | None = None, level: float = 0.05) -> str:
    """Grouped box plot; significant pairs (adjusted p < ``level``) get brackets."""
    if not report.models:
        raise ValueError("report contains no models")
    names = list(dict.fromkeys(m.name for m in report.models))
    colour = {n: PALETTE[i % len(PALETTE)] for i, n in enumerate(names)}
    groups = report.groups()

    values = [a for m in report.models for a in m.accuracies]
    lo, hi = min(values), max(values)
    pad = max(0.01, 0.05 * (hi - lo))
    lo, hi = max(0.0, lo - pad), min(1.0, hi + pad)
    if hi <= lo:
        lo, hi = max(0.0, lo - 0.05), min(1.0, hi + 0.05)

    def y(v: float) -> float:
        return TOP + PLOT_H * (1.0 - (v - lo) / (hi - lo))

    sig = [c for c in report.comparisons if c.p_adjusted < level]
    per_group_sig = {g: [c for c in sig if c.group == g] for g in groups}
    headroom = BRACKET_STEP * (max((len(v) for v in per_group_sig.values()), default=0) + 1)
    top = TOP + headroom

    parts: list[str] = []
    x = LEFT + GAP
    centres: dict[tuple[str, str], float] = {}
    group_spans = []
    for g in groups:
        start = x
        for m in (m for m in report.models if m.group == g):
            b = m.box
            cx = x + BOX_W / 2
            centres[(g, m.name)] = cx
            c = colour[m.name]
            parts.append(f'<line x1="{cx:.1f}" y1="{y(b.whisker_high) + headroom:.1f}" x2="{cx:.1f}" '
                         f'y2="{y(b.whisker_low) + headroom:.1f}" stroke="#333"/>')
            for w in (b.whisker_low, b.whisker_high):
                parts.append(f'<line x1="{cx - BOX_W / 4:.1f}" y1="{y(w) + headroom:.1f}" '
                             f'x2="{cx + BOX_W / 4:.1f}" y2="{y(w) + headroom:.1f}" stroke="#333"/>')
            top_y, bot_y = y(b.q3) + headroom, y(b.q1) + headroom
            parts.append(f'<rect x="{x:.1f}" y="{top_y:.1f}" width="{BOX_W}" '
                         f'height="{max(bot_y - top_y, 0.5):.1f}" fill="{c}" stroke="#333">'
                         f'<title>{escape(m.name)} median={b.median:.4f}</title></rect>')
            parts.append(f'<line x1="{x:.1f}" y1="{y(b.median) + headroom:.1f}" x2="{x + BOX_W:.1f}" '
                         f'y2="{y(b.median) + headroom:.1f}" stroke="#000" stroke-width="2"/>')
            for o in b.outliers:
                parts.append(f'<circle cx="{cx:.1f}" cy="{y(o) + headroom:.1f}" r="2.5" '
                             f'fill="none" stroke="#333"/>')
            x += BOX_W + GAP
        group_spans.append((g, start, x - GAP))
        x += GROUP_GAP

    for g, a, b in group_spans:
        level_y = top - BRACKET_STEP / 2
        for c in per_group_sig[g]:
            x1, x2 = sorted((centres[(g, c.a)], centres[(g, c.b)]))
            parts.append(f'<path d="M{x1:.1f},{level_y + 5:.1f} V{level_y:.1f} H{x2:.1f} V{level_y + 5:.1f}" '
                         f'fill="none" stroke="#000"/>')
            parts.append(f'<text x="{(x1 + x2) / 2:.1f}" y="{level_y - 2:.1f}" font-size="11" '
                         f'text-anchor="middle">{stars(c.p_adjusted)}</text>')
            level_y -= BRACKET_STEP
        parts.append(f'<text x="{(a + b) / 2:.1f}" y="{top + PLOT_H + 22:.1f}" font-size="13" '
                     f'text-anchor="middle">{escape(g)}</text>')

    width = x - GROUP_GAP + GAP + 150
    height = top + PLOT_H + 40
    axis = [f'<line x1="{LEFT}" y1="{top}" x2="{LEFT}" y2="{top + PLOT_H}" stroke="#000"/>']
    for i in range(6):
        v = lo + (hi - lo) * i / 5
        yy = y(v) + headroom
        axis.append(f'<line x1="{LEFT - 4}" y1="{yy:.1f}" x2="{LEFT}" y2="{yy:.1f}" stroke="#000"/>')
        axis.append(f'<text x="{LEFT - 7}" y="{yy + 4:.1f}" font-size="11" text-anchor="end">{v:.3f}</text>')
    axis.append(f'<text x="18" y="{top + PLOT_H / 2:.1f}" font-size="13" text-anchor="middle" '
                f'transform="rotate(-90 18 {top + PLOT_H / 2:.1f})">test accuracy</text>')
    legend = []
    lx = width - 140
    for i, n in enumerate(names):
        ly = top + 16 * i
        legend.append(f'<rect x="{lx}" y="{ly}" width="12" height="12" fill="{colour[n]}" stroke="#333"/>')
        legend.append(f'<text x="{lx + 18}" y="{ly + 10}" font-size="12">{escape(n)}</text>')
    heading = []
    if title:
        heading.append(f'<text x="{width / 2:.1f}" y="20" font-size="14" text-anchor="middle">'
                       f'{escape(title)}</text>')
    body = "\n".join(heading + axis + parts + legend)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
            f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif">\n'
            f'<rect width="100%" height="100%" fill="#fff"/>\n{body}\n</svg>\n')
