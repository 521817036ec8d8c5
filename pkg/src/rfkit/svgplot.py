"""Minimal deterministic SVG writer for report plots.

Fixed-precision coordinates and a static palette keep byte-identical output
across runs. Covers exactly what the reports need: line plots (optionally
with a shaded band), heatmaps, and histograms.
"""

import numpy as np

PALETTE = ["#1f6fb4", "#d94f30", "#3a9a55", "#8b5ab0", "#b58a2a", "#4e4e4e"]
W, H = 560, 360
ML, MR, MT, MB = 62, 16, 34, 46


def _fmt(v):
    return format(float(v), ".3f")


class _Canvas:
    def __init__(self, title, xlabel, ylabel):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14" '
            f'font-family="sans-serif">{title}</text>',
            f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif">{xlabel}</text>',
            f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif" transform="rotate(-90 14 {H / 2})">{ylabel}</text>',
        ]

    def add(self, s):
        self.parts.append(s)

    def finish(self, path):
        self.parts.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(self.parts))
            fh.write("\n")


def _scale(vals, lo, hi, out_lo, out_hi):
    if hi <= lo:
        hi = lo + 1.0
    return out_lo + (np.asarray(vals, dtype=np.float64) - lo) * (out_hi - out_lo) / (hi - lo)


def _axes(c, xlo, xhi, ylo, yhi, logy=False):
    c.add(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
          f'fill="none" stroke="#999"/>')
    for i in range(5):
        fx = xlo + (xhi - xlo) * i / 4
        px = _scale([fx], xlo, xhi, ML, W - MR)[0]
        c.add(f'<text x="{_fmt(px)}" y="{H - MB + 16}" text-anchor="middle" '
              f'font-size="10" font-family="sans-serif">{fx:.3g}</text>')
        fy = ylo + (yhi - ylo) * i / 4
        py = _scale([fy], ylo, yhi, H - MB, MT)[0]
        label = f"{10 ** fy:.2g}" if logy else f"{fy:.3g}"
        c.add(f'<text x="{ML - 6}" y="{_fmt(py + 3)}" text-anchor="end" '
              f'font-size="10" font-family="sans-serif">{label}</text>')


def line_plot(path, xs, series, title="", xlabel="", ylabel="", band=None,
              logy=False):
    """series: {name: y-array}; band: optional (low, high) arrays shading the
    first series. logy plots log10 of the values."""
    xs = np.asarray(xs, dtype=np.float64)
    data = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    if logy:
        data = {k: np.log10(np.maximum(v, 1e-300)) for k, v in data.items()}
    allv = np.concatenate(list(data.values()))
    if band is not None:
        b0 = np.asarray(band[0], dtype=np.float64)
        b1 = np.asarray(band[1], dtype=np.float64)
        if logy:
            b0 = np.log10(np.maximum(b0, 1e-300))
            b1 = np.log10(np.maximum(b1, 1e-300))
        allv = np.concatenate([allv, b0, b1])
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(allv.min()), float(allv.max())
    pad = 0.05 * (yhi - ylo or 1.0)
    ylo, yhi = ylo - pad, yhi + pad
    c = _Canvas(title, xlabel, ylabel)
    _axes(c, xlo, xhi, ylo, yhi, logy=logy)
    px = _scale(xs, xlo, xhi, ML, W - MR)
    if band is not None:
        pts = [f"{_fmt(x)},{_fmt(y)}" for x, y in
               zip(px, _scale(b1, ylo, yhi, H - MB, MT))]
        pts += [f"{_fmt(x)},{_fmt(y)}" for x, y in
                zip(px[::-1], _scale(b0, ylo, yhi, H - MB, MT)[::-1])]
        c.add(f'<polygon points="{" ".join(pts)}" fill="#1f6fb4" opacity="0.18"/>')
    for i, (name, ys) in enumerate(data.items()):
        py = _scale(ys, ylo, yhi, H - MB, MT)
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py))
        col = PALETTE[i % len(PALETTE)]
        c.add(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.6"/>')
        c.add(f'<text x="{W - MR - 6}" y="{MT + 14 + 14 * i}" text-anchor="end" '
              f'font-size="11" font-family="sans-serif" fill="{col}">{name}</text>')
    c.finish(path)


def heatmap(path, matrix, title="", xlabel="", ylabel=""):
    """Diverging blue-white-red map, symmetric around zero."""
    m = np.asarray(matrix, dtype=np.float64)
    vmax = float(np.abs(m).max()) or 1.0
    ny, nx = m.shape
    cw = (W - ML - MR) / nx
    ch = (H - MT - MB) / ny
    c = _Canvas(title, xlabel, ylabel)
    for i in range(ny):
        for j in range(nx):
            v = m[i, j] / vmax
            if v >= 0:
                r, g, b = 255, int(255 * (1 - v)), int(255 * (1 - v))
            else:
                r, g, b = int(255 * (1 + v)), int(255 * (1 + v)), 255
            c.add(f'<rect x="{_fmt(ML + j * cw)}" y="{_fmt(MT + i * ch)}" '
                  f'width="{_fmt(cw + 0.5)}" height="{_fmt(ch + 0.5)}" '
                  f'fill="rgb({r},{g},{b})"/>')
    c.add(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
          f'fill="none" stroke="#999"/>')
    c.finish(path)


def histogram(path, values, bins=20, title="", xlabel="", ylabel="count",
              vline=None):
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if vline is not None:
        lo, hi = min(lo, vline), max(hi, vline)
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    c = _Canvas(title, xlabel, ylabel)
    ymax = float(counts.max()) or 1.0
    _axes(c, lo, hi, 0.0, ymax)
    for ct, e0, e1 in zip(counts, edges[:-1], edges[1:]):
        x0 = _scale([e0], lo, hi, ML, W - MR)[0]
        x1 = _scale([e1], lo, hi, ML, W - MR)[0]
        y = _scale([ct], 0, ymax, H - MB, MT)[0]
        c.add(f'<rect x="{_fmt(x0)}" y="{_fmt(y)}" width="{_fmt(max(x1 - x0 - 1, 1))}" '
              f'height="{_fmt(H - MB - y)}" fill="#1f6fb4" opacity="0.8"/>')
    if vline is not None:
        x = _scale([vline], lo, hi, ML, W - MR)[0]
        c.add(f'<line x1="{_fmt(x)}" y1="{MT}" x2="{_fmt(x)}" y2="{H - MB}" '
              f'stroke="#d94f30" stroke-width="1.5" stroke-dasharray="4 3"/>')
    c.finish(path)
