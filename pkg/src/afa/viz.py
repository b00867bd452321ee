"""Attention heat maps as standalone HTML, curves as SVG 1.1."""
from __future__ import annotations

import html

import numpy as np

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def attention_html(tokens, a, prediction=None, label=None, title="attention"):
    a = np.asarray(a, dtype=np.float64)
    if len(tokens) != len(a):
        raise ValueError(f"{len(tokens)} tokens but {len(a)} attention weights")
    top = a.max() if a.size and a.max() > 0 else 1.0
    spans = []
    for tok, w in zip(tokens, a):
        spans.append(f'<span class="tok" style="background-color: rgba(200, 30, 30, {w / top:.4f})"'
                     f' title="{w:.6f}">{html.escape(str(tok))}</span>')
    meta = []
    if prediction is not None:
        meta.append(f"predicted: {html.escape(str(prediction))}")
    if label is not None:
        meta.append(f"gold: {html.escape(str(label))}")
    return (
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{html.escape(title)}</title>\n"
        "<style>body{font-family:sans-serif;line-height:2.2}"
        ".tok{padding:2px 4px;margin:1px;border-radius:3px}"
        ".meta{color:#444;font-size:90%}</style>\n</head>\n<body>\n"
        f"<p class=\"meta\">{' | '.join(meta)}</p>\n"
        f"<p>{' '.join(spans)}</p>\n</body>\n</html>\n")


def render_attention_html(tokens, a, prediction, label, out_path):
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(attention_html(tokens, a, prediction, label))


def attention_text(tokens, a, width=20):
    """Plain-text bar chart of attention per token."""
    a = np.asarray(a, dtype=np.float64)
    top = a.max() if a.size and a.max() > 0 else 1.0
    lines = [f"{str(t)[:16]:>16} {w:8.4f} {'#' * int(round(width * w / top))}" for t, w in zip(tokens, a)]
    return "\n".join(lines) + "\n"


def curve_svg(series, title="", xlabel="", ylabel="", width=480, height=320):
    """``series`` maps a name to ``(x, y)`` or ``(x, y, lo, hi)`` sequences."""
    if not series:
        raise ValueError("no series to plot")
    parsed = {}
    for name, s in series.items():
        x = np.asarray(s[0], dtype=np.float64)
        y = np.asarray(s[1], dtype=np.float64)
        if x.size == 0 or x.size != y.size:
            raise ValueError(f"series {name!r} is empty or ragged")
        if np.any(np.diff(x) <= 0):
            raise ValueError(f"series {name!r}: x must be strictly increasing")
        band = (np.asarray(s[2], float), np.asarray(s[3], float)) if len(s) == 4 else None
        parsed[name] = (x, y, band)

    xs = np.concatenate([p[0] for p in parsed.values()])
    ys = np.concatenate([np.concatenate([p[1]] + (list(p[2]) if p[2] else [])) for p in parsed.values()])
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    left, right, top, bottom = 56, 20, 30, 44
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{html.escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{px(v):.1f}" y="{top + ph + 16}" text-anchor="middle" font-size="10">{v:.3g}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{left - 6}" y="{py(v) + 3:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 6}" text-anchor="middle" font-size="11">'
               f'{html.escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="11" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">{html.escape(ylabel)}</text>')
    for i, (name, (x, y, band)) in enumerate(parsed.items()):
        color = _PALETTE[i % len(_PALETTE)]
        if band is not None:
            lo, hi = band
            pts = [f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, hi)]
            pts += [f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[::-1], lo[::-1])]
            out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for a, b in zip(x, y):
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        ly = top + 12 + 16 * i
        out.append(f'<line x1="{left + pw - 110}" y1="{ly}" x2="{left + pw - 90}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 85}" y="{ly + 4}" font-size="11">{html.escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_curve_svg(series, out_path, **kwargs):
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(curve_svg(series, **kwargs))
