"""Planar geometry helpers: convex hulls and Feret (caliper) diameters.

Pixel components are treated as point sets (one point per pixel center),
so the Feret diameter of a component is the largest pairwise Euclidean
distance among its pixels. Rotating calipers over the convex hull gives
that maximum exactly in O(n log n).
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInput


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _chains(points: np.ndarray) -> tuple[list, list]:
    """Lower and upper hull chains of the lexicographically sorted points."""
    pts = sorted(map(tuple, points))
    lower: list = []
    upper: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower, upper


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Hull vertices in counter-clockwise order, collinear points dropped."""
    pts = _as_points(points)
    if len(pts) == 1 or (pts == pts[0]).all():
        return pts[:1].copy()
    lower, upper = _chains(pts)
    hull = lower[:-1] + upper[:-1]
    return np.asarray(hull, dtype=np.float64)


def _rotating_calipers(points: np.ndarray):
    """Yield antipodal vertex pairs of the hull (Shamos / Eppstein scheme)."""
    lower, upper = _chains(points)
    upper = upper[::-1]  # walk the top chain left to right
    i, j = 0, len(lower) - 1
    while i < len(upper) - 1 or j > 0:
        yield upper[i], lower[j]
        if i == len(upper) - 1:
            j -= 1
        elif j == 0:
            i += 1
        elif (upper[i + 1][1] - upper[i][1]) * (lower[j][0] - lower[j - 1][0]) > (
            lower[j][1] - lower[j - 1][1]
        ) * (upper[i + 1][0] - upper[i][0]):
            i += 1
        else:
            j -= 1


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise EmptyInput("no points given")
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (n, 2) points, got shape {pts.shape}")
    return pts


def feret_diameter(points) -> float:
    """Largest pairwise Euclidean distance within a point set."""
    pts = _as_points(points)
    if len(pts) == 1:
        return 0.0
    best = 0.0
    for p, q in _rotating_calipers(pts):
        d2 = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
        if d2 > best:
            best = d2
    return float(np.sqrt(best))
