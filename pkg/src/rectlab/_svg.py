"""Bare-bones multi-panel line plots written straight to SVG text."""

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v):
    return f"{v:.2f}"


def _panel(title, series, x0, y0, w, h, pad=28):
    xs = np.concatenate([np.asarray(s[0], float) for s in series])
    ys = np.concatenate([np.asarray(s[1], float) for s in series])
    lo_x, hi_x = xs.min(), xs.max()
    lo_y, hi_y = ys.min(), ys.max()
    span = max(hi_x - lo_x, hi_y - lo_y, 1e-12)
    # equal aspect so straight lines look straight
    cx, cy = (lo_x + hi_x) / 2, (lo_y + hi_y) / 2
    scale = (min(w, h) - 2 * pad) / span

    def px(x, y):
        return x0 + w / 2 + (x - cx) * scale, y0 + h / 2 - (y - cy) * scale

    out = [
        f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(w)}" height="{_fmt(h)}" '
        'fill="white" stroke="#999"/>',
        f'<text x="{_fmt(x0 + w / 2)}" y="{_fmt(y0 + 16)}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">{title}</text>',
    ]
    for i, (sx, sy, label) in enumerate(series):
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in (px(u, v) for u, v in zip(sx, sy)))
        color = _COLORS[i % len(_COLORS)]
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        lx, ly = x0 + 8, y0 + h - 8 - 14 * (len(series) - 1 - i)
        out.append(f'<text x="{_fmt(lx)}" y="{_fmt(ly)}" font-size="10" fill="{color}" '
                   f'font-family="sans-serif">{label}</text>')
    return out


def write_panels(path, panels, panel_size=240):
    """``panels`` is a list of ``(title, [(xs, ys, label), ...])`` laid out in one row."""
    w = panel_size * len(panels)
    body = []
    for i, (title, series) in enumerate(panels):
        body += _panel(title, series, i * panel_size, 0, panel_size, panel_size)
    text = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{panel_size}" '
        f'viewBox="0 0 {w} {panel_size}">\n' + "\n".join(body) + "\n</svg>\n"
    )
    with open(path, "w") as f:
        f.write(text)
