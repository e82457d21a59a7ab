"""Minimal SVG plots for reports (no plotting dependency)."""

from __future__ import annotations

import numpy as np

_HEAD = ('<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
         'viewBox="0 0 {w} {h}">\n<rect width="100%" height="100%" fill="white"/>\n')


class Canvas:
    """Fixed-aspect plot of chart coordinates onto a square canvas."""

    def __init__(self, bounds, size=480, pad=20):
        x0, x1, y0, y1 = bounds
        span = max(x1 - x0, y1 - y0)
        self.x0, self.y0 = x0 - 0.5 * (span - (x1 - x0)), y0 - 0.5 * (span - (y1 - y0))
        self.k = (size - 2 * pad) / span
        self.pad, self.size = pad, size
        self.items = []

    def _xy(self, P):
        P = np.atleast_2d(P)
        X = self.pad + (P[:, 0] - self.x0) * self.k
        Y = self.size - self.pad - (P[:, 1] - self.y0) * self.k
        return X, Y

    def polyline(self, P, color="black", width=1.0, closed=False):
        X, Y = self._xy(P)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(X, Y))
        tag = "polygon" if closed else "polyline"
        self.items.append(f'<{tag} points="{pts}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"/>')

    def points(self, P, color="black", r=2.0):
        X, Y = self._xy(P)
        for x, y in zip(X, Y):
            self.items.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{color}"/>')

    def text(self, s, x=8, y=14):
        self.items.append(f'<text x="{x}" y="{y}" font-family="monospace" font-size="11">{s}</text>')

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(_HEAD.format(w=self.size, h=self.size))
            fh.write("\n".join(self.items))
            fh.write("\n</svg>\n")
