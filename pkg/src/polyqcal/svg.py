"""Minimal deterministic SVG emission.

Byte-identical output for identical input is a pipeline contract, so
figures are written with fixed float formatting and no timestamps or
generated ids.
"""

from __future__ import annotations

import math


def _f(x: float) -> str:
    if not math.isfinite(x):
        x = 0.0
    s = f"{x:.3f}"
    return s.rstrip("0").rstrip(".") if "." in s else s


class Canvas:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.parts: list[str] = []

    def line(self, x1, y1, x2, y2, stroke="#333", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}"'
            f' stroke="{stroke}" stroke-width="{_f(width)}"{d}/>')

    def rect(self, x, y, w, h, fill="#4878a8", stroke="none", opacity=None):
        o = f' fill-opacity="{_f(opacity)}"' if opacity is not None else ""
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}"'
            f' fill="{fill}" stroke="{stroke}"{o}/>')

    def circle(self, cx, cy, r, fill="#333"):
        self.parts.append(
            f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" fill="{fill}"/>')

    def cross(self, cx, cy, size=3.0, stroke="#b03030"):
        s = size
        self.line(cx - s, cy - s, cx + s, cy + s, stroke=stroke, width=1.2)
        self.line(cx - s, cy + s, cx + s, cy - s, stroke=stroke, width=1.2)

    def polyline(self, pts, stroke="#b03030", width=1.2):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}"'
            f' stroke-width="{_f(width)}"/>')

    def polygon(self, pts, fill="#c8d8ec"):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.parts.append(f'<polygon points="{coords}" fill="{fill}" stroke="none"/>')

    def text(self, x, y, s, size=10, anchor="start", color="#222"):
        s = (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}"'
            f' font-family="Helvetica,Arial,sans-serif" text-anchor="{anchor}"'
            f' fill="{color}">{s}</text>')

    def to_string(self) -> str:
        body = "\n".join(self.parts)
        return (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.width)}"'
            f' height="{_f(self.height)}" viewBox="0 0 {_f(self.width)} {_f(self.height)}">\n'
            f'<rect x="0" y="0" width="{_f(self.width)}" height="{_f(self.height)}" fill="#ffffff"/>\n'
            f"{body}\n</svg>\n")

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_string())


class Axes:
    """Linear data-to-pixel mapping inside a margin box with ticks."""

    def __init__(self, canvas: Canvas, x0, y0, w, h, xlim, ylim):
        self.c = canvas
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim = xlim
        self.ylim = ylim

    def px(self, x: float) -> float:
        a, b = self.xlim
        span = (b - a) or 1.0
        return self.x0 + (x - a) / span * self.w

    def py(self, y: float) -> float:
        a, b = self.ylim
        span = (b - a) or 1.0
        return self.y0 + self.h - (y - a) / span * self.h

    def frame(self, title="", xlabel="", ylabel=""):
        c = self.c
        c.rect(self.x0, self.y0, self.w, self.h, fill="none", stroke="#888")
        if title:
            c.text(self.x0 + self.w / 2, self.y0 - 6, title, size=11, anchor="middle")
        if xlabel:
            c.text(self.x0 + self.w / 2, self.y0 + self.h + 28, xlabel, anchor="middle")
        if ylabel:
            c.text(self.x0 - 38, self.y0 + self.h / 2, ylabel, size=10, anchor="middle")

    def xticks(self, values, fmt="{:.3g}"):
        for v in values:
            x = self.px(v)
            self.c.line(x, self.y0 + self.h, x, self.y0 + self.h + 4, stroke="#888")
            self.c.text(x, self.y0 + self.h + 15, fmt.format(v), size=8, anchor="middle")

    def yticks(self, values, fmt="{:.3g}"):
        for v in values:
            y = self.py(v)
            self.c.line(self.x0 - 4, y, self.x0, y, stroke="#888")
            self.c.text(self.x0 - 6, y + 3, fmt.format(v), size=8, anchor="end")


def placeholder(path: str, caption: str) -> None:
    c = Canvas(400, 120)
    c.text(200, 60, f"(no data) {caption}", size=11, anchor="middle", color="#777")
    c.save(path)
