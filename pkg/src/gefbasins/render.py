"""Static SVG pictures of basin maps: outlines, sinks, saddles and gradient curves."""

from __future__ import annotations

from xml.sax.saxutils import quoteattr

import numpy as np

from .basins import BasinMap, basin_outlines

__all__ = ["render_svg"]


def _fmt(v):
    return f"{v:.4f}".rstrip("0").rstrip(".") if v != 0 else "0"


class _Canvas:
    def __init__(self, window, size):
        c, half = window
        self.c = complex(c)
        self.half = float(half)
        self.size = int(size)
        self.scale = self.size / (2 * self.half)

    def xy(self, z):
        z = np.asarray(z, dtype=np.complex128)
        x = (z.real - (self.c.real - self.half)) * self.scale
        y = ((self.c.imag + self.half) - z.imag) * self.scale
        return x, y

    def inside(self, z):
        d = complex(z) - self.c
        return abs(d.real) <= self.half and abs(d.imag) <= self.half

    def path(self, pts, close):
        x, y = self.xy(pts)
        parts = [f"M{_fmt(x[0])},{_fmt(y[0])}"]
        parts += [f"L{_fmt(a)},{_fmt(b)}" for a, b in zip(x[1:], y[1:])]
        if close:
            parts.append("Z")
        return "".join(parts)


def render_svg(bmap: BasinMap = None, window=None, trajectories=(), zeros=None, saddles=(),
               maxima=(), size: int = 600, basins="all") -> str:
    """SVG document of a basin map.

    Each basin (``basins="all"``) or only the interior ones
    (``basins="interior"``) gets one ``<path class="basin">`` made of closed
    subpaths.  Sinks are dots, saddles crosses, local maxima small squares,
    and each trajectory (an array of complex points or an object with a
    ``points`` attribute) a polyline.  Output is a pure function of the
    inputs.
    """
    if bmap is None and window is None:
        raise ValueError("need a basin map or a window")
    window = bmap.window if window is None else window
    cv = _Canvas(window, size)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{cv.size}" height="{cv.size}" '
           f'viewBox="0 0 {cv.size} {cv.size}">',
           f'<rect class="frame" x="0" y="0" width="{cv.size}" height="{cv.size}" '
           f'fill="white" stroke="black" stroke-width="1"/>']
    if bmap is not None:
        if basins == "interior":
            labels = bmap.interior_indices().tolist()
        else:
            labels = np.unique(bmap.labels[bmap.labels >= 0]).tolist()
        shapes = basin_outlines(bmap, labels)
        for k in sorted(shapes):
            d = "".join(cv.path(poly, True) for poly in shapes[k] if len(poly) > 1)
            if d:
                out.append(f'<path class="basin" data-label="{k}" d="{d}" fill="none" '
                           f'stroke="#1f4e79" stroke-width="0.8"/>')
        if zeros is None:
            zeros = bmap.zeros
    zl = [q.location if hasattr(q, "location") else complex(q) for q in (zeros or ())]
    for tr in trajectories:
        pts = getattr(tr, "points", tr)
        pts = np.asarray(pts, dtype=np.complex128)
        if pts.size < 2:
            continue
        x, y = cv.xy(pts)
        coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, y))
        out.append(f'<polyline class="trajectory" points="{coords}" fill="none" '
                   f'stroke="#999999" stroke-width="0.5"/>')
    for z in zl:
        if cv.inside(z):
            x, y = cv.xy(z)
            out.append(f'<circle class="zero" cx="{_fmt(float(x))}" cy="{_fmt(float(y))}" r="2.5" '
                       f'fill="black"/>')
    for s in saddles:
        z = s.location if hasattr(s, "location") else complex(s)
        if cv.inside(z):
            x, y = cv.xy(z)
            x, y = float(x), float(y)
            out.append(f'<path class="saddle" d="M{_fmt(x - 3)},{_fmt(y - 3)}L{_fmt(x + 3)},'
                       f'{_fmt(y + 3)}M{_fmt(x - 3)},{_fmt(y + 3)}L{_fmt(x + 3)},{_fmt(y - 3)}" '
                       f'stroke="#c00000" stroke-width="1"/>')
    for s in maxima:
        z = s.location if hasattr(s, "location") else complex(s)
        if cv.inside(z):
            x, y = cv.xy(z)
            out.append(f'<rect class="maximum" x="{_fmt(float(x) - 2)}" y="{_fmt(float(y) - 2)}" '
                       f'width="4" height="4" fill="#2e7d32"/>')
    title = quoteattr(f"window center {cv.c} half side {cv.half}")
    out.append(f"<desc>{title[1:-1]}</desc>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
