"""Planar/3D geometry primitives shared by the estimators and the allocator.

Positions are numpy float64 arrays of shape (3,); ground-robot scenarios keep
z = 0 but all operations accept full 3D coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Cross-product tolerance for the boundary-inclusive hull test (meters^2).
_HULL_EPS = 1e-9


def as_position(p) -> np.ndarray:
    """Coerce a point-like (tuple, list, array) into a finite (3,) float array."""
    a = np.asarray(p, dtype=float)
    if a.shape == (2,):
        a = np.array([a[0], a[1], 0.0])
    if a.shape != (3,):
        raise ValueError(f"position must have 2 or 3 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"position has non-finite components: {a}")
    return a


def distance(a, b) -> float:
    """Euclidean distance in meters."""
    return float(np.linalg.norm(as_position(a) - as_position(b)))


def centroid(points) -> np.ndarray:
    """Component-wise arithmetic mean of a non-empty list of positions."""
    pts = [as_position(p) for p in points]
    if not pts:
        raise ValueError("centroid of an empty point list is undefined")
    return np.mean(pts, axis=0)


@dataclass(frozen=True)
class TofRange:
    """Two-way-ranging observation: measured distance between nodes i and j."""

    i: int
    j: int
    distance: float

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("ToF range requires two distinct nodes")
        if self.distance < 0:
            raise ValueError("ToF distance cannot be negative")


@dataclass(frozen=True)
class TdoaSample:
    """Difference-of-distances observation by a passive listener.

    ``delta`` is (range listener->j) - (range listener->i) in meters, signed.
    """

    listener: int
    i: int
    j: int
    delta: float

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("TDoA sample requires a distinct active pair")
        if self.listener in (self.i, self.j):
            raise ValueError("listener cannot be part of its own active pair")


def _cross2(o, a, b) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def convex_hull_2d(points) -> np.ndarray:
    """Convex hull of the xy-projection, counter-clockwise (monotone chain).

    Returns an (m, 2) array of hull vertices. Collinear input collapses to the
    two extreme points.
    """
    pts = np.unique(np.array([as_position(p)[:2] for p in points]), axis=0)
    if len(pts) == 1:
        return pts
    # np.unique sorts lexicographically, which is what the chain needs.
    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross2(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def point_in_convex_hull_2d(p, hull_points) -> bool:
    """True iff p lies inside or on the convex hull of hull_points (xy only)."""
    if len(hull_points) < 3:
        raise ValueError("hull test needs at least 3 points")
    q = as_position(p)[:2]
    hull = convex_hull_2d(hull_points)
    if len(hull) == 1:
        return bool(np.linalg.norm(q - hull[0]) <= _HULL_EPS)
    if len(hull) == 2:
        # Degenerate (collinear) hull: point must sit on the segment.
        a, b = hull
        ab = b - a
        t = np.dot(q - a, ab) / np.dot(ab, ab)
        t = min(max(t, 0.0), 1.0)
        return bool(np.linalg.norm(a + t * ab - q) <= 1e-9)
    for k in range(len(hull)):
        a = hull[k]
        b = hull[(k + 1) % len(hull)]
        if _cross2(a, b, q) < -_HULL_EPS:
            return False
    return True


def distance_to_hull_2d(p, hull_points) -> float:
    """Signed distance from p to the hull boundary: negative inside, positive outside."""
    q = as_position(p)[:2]
    hull = convex_hull_2d(hull_points)
    if len(hull) < 3:
        raise ValueError("signed hull distance needs a non-degenerate hull")
    edge_dists = []
    inside = True
    for k in range(len(hull)):
        a = hull[k]
        b = hull[(k + 1) % len(hull)]
        ab = b - a
        if _cross2(a, b, q) < 0:
            inside = False
        t = min(max(np.dot(q - a, ab) / np.dot(ab, ab), 0.0), 1.0)
        edge_dists.append(np.linalg.norm(a + t * ab - q))
    d = float(min(edge_dists))
    return -d if inside else d
