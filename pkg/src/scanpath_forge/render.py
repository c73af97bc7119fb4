"""SVG overlays of scanpaths: numbered fixation circles joined by saccade lines."""

from __future__ import annotations

from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .core import Scanpath, validate_scanpath

FIRST_COLOR = "#e4572e"
COLOR = "#2e86ab"


def _radii(sp: Scanpath, base: float) -> np.ndarray:
    times = [f.t_ms for f in sp.fixations]
    if len(sp) < 2 or any(t is None for t in times):
        return np.full(len(sp), base)
    dur = np.diff(np.asarray(times, float))
    if np.any(dur <= 0):
        return np.full(len(sp), base)
    dur = np.append(dur, dur.mean())  # the last fixation has no end time
    return np.clip(base * dur / dur.mean(), 0.4 * base, 3.0 * base)


def scanpath_svg(sp: Scanpath, image_href: str | None = None, radius: float | None = None) -> str:
    """Return a deterministic SVG document for ``sp``.

    Circle radius follows fixation duration when onset times are present,
    otherwise it is constant.  The first fixation is drawn in a distinct
    colour.
    """
    validate_scanpath(sp)
    w, h = sp.screen_w, sp.screen_h
    base = radius if radius is not None else max(w, h) / 40.0
    r = _radii(sp, base)
    fmt = lambda v: f"{v:.3f}".rstrip("0").rstrip(".")
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
    ]
    if image_href is not None:
        lines.append(f'<image x="0" y="0" width="{w}" height="{h}" xlink:href={quoteattr(image_href)}/>')
    title = escape(f"{sp.image_id} {sp.observer_id}".strip())
    if title:
        lines.append(f"<title>{title}</title>")
    xy = sp.xy
    stroke = fmt(base / 4)
    for (x0, y0), (x1, y1) in zip(xy[:-1], xy[1:]):
        lines.append(
            f'<line x1="{fmt(x0)}" y1="{fmt(y0)}" x2="{fmt(x1)}" y2="{fmt(y1)}" '
            f'stroke="{COLOR}" stroke-width="{stroke}" stroke-opacity="0.8"/>'
        )
    font = fmt(base)
    for k, ((x, y), rad) in enumerate(zip(xy, r)):
        fill = FIRST_COLOR if k == 0 else COLOR
        lines.append(
            f'<circle cx="{fmt(x)}" cy="{fmt(y)}" r="{fmt(rad)}" fill="{fill}" fill-opacity="0.75" '
            f'stroke="white" stroke-width="{stroke}"/>'
        )
        lines.append(
            f'<text x="{fmt(x)}" y="{fmt(y)}" font-size="{font}" text-anchor="middle" '
            f'dominant-baseline="central" fill="white">{k + 1}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
