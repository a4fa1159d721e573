"""Planar polygon primitives shared by the outline and feature pipelines.

Polygons are simple closed outlines given as (n, 2) float arrays of vertices
in image coordinates (y grows downward on screen). The closing edge from the
last vertex back to the first is implicit. With the y-down convention a
traversal that looks clockwise on screen has positive shoelace sum.
"""

from __future__ import annotations

import numpy as np

from .errors import InvariantError


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvariantError(f"expected an (n, 2) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvariantError("outline contains non-finite coordinates")
    return pts


def signed_area(poly: np.ndarray) -> float:
    """Shoelace sum; positive for screen-clockwise traversal (y-down)."""
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def polygon_area(poly: np.ndarray) -> float:
    return abs(signed_area(poly))


def polygon_perimeter(poly: np.ndarray) -> float:
    d = np.roll(poly, -1, axis=0) - poly
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    """Area centroid of the closed polygon (not the vertex mean)."""
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    if a == 0.0:
        raise InvariantError("polygon has zero area, centroid undefined")
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def ensure_screen_clockwise(poly: np.ndarray) -> np.ndarray:
    """Return the polygon traversed clockwise on screen, keeping vertex 0 first."""
    if signed_area(poly) < 0.0:
        return np.concatenate([poly[:1], poly[:0:-1]], axis=0)
    return poly


def cumulative_arclength(poly: np.ndarray) -> np.ndarray:
    """Cumulative edge lengths; entry i is the arc position of vertex i, the
    final entry is the full perimeter."""
    d = np.roll(poly, -1, axis=0) - poly
    seg = np.hypot(d[:, 0], d[:, 1])
    out = np.empty(len(poly) + 1)
    out[0] = 0.0
    np.cumsum(seg, out=out[1:])
    return out


def resample_closed(poly: np.ndarray, count: int, start: float = 0.0) -> np.ndarray:
    """Resample the closed outline at `count` arc-length-uniform positions.

    Sampling begins at arc position `start` (measured along the traversal
    from vertex 0) and advances by perimeter/count per sample, wrapping
    around the closing edge. Vertices are interpolated linearly.
    """
    if count < 1:
        raise InvariantError("resample count must be positive")
    arc = cumulative_arclength(poly)
    perim = arc[-1]
    if perim <= 0.0:
        raise InvariantError("polygon has zero perimeter")
    s = (start + perim * np.arange(count) / count) % perim
    idx = np.searchsorted(arc, s, side="right") - 1
    idx = np.clip(idx, 0, len(poly) - 1)
    seg = arc[idx + 1] - arc[idx]
    seg[seg == 0.0] = 1.0
    frac = (s - arc[idx]) / seg
    nxt = (idx + 1) % len(poly)
    return poly[idx] + frac[:, None] * (poly[nxt] - poly[idx])


def ray_outline_intersection(poly: np.ndarray, origin, direction):
    """Nearest intersection of the ray origin + t*direction (t > 0) with the
    outline. Returns (t, point) or None when the ray misses every edge."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    nrm = np.hypot(d[0], d[1])
    if nrm == 0.0:
        raise InvariantError("ray direction is the zero vector")
    d = d / nrm
    best = None
    p = poly
    q = np.roll(poly, -1, axis=0)
    e = q - p
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    w = p - o
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        u = (w[:, 0] * d[1] - w[:, 1] * d[0]) / denom
    ok = (np.abs(denom) > 1e-300) & (t > 1e-12) & (u >= 0.0) & (u < 1.0)
    if not np.any(ok):
        return None
    i = np.argmin(np.where(ok, t, np.inf))
    best = (float(t[i]), o + t[i] * d)
    return best


def chord_width(poly: np.ndarray, point, direction) -> float:
    """Total length of the intersection of the polygon interior with the
    straight line through `point` along `direction`, by even-odd pairing of
    edge crossings. Returns 0.0 when the line misses the outline."""
    o = np.asarray(point, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.hypot(d[0], d[1])
    normal = np.array([-d[1], d[0]])
    side = (poly - o) @ normal
    along = (poly - o) @ d
    sn = np.roll(side, -1)
    an = np.roll(along, -1)
    cross = (side > 0) != (sn > 0)
    if not np.any(cross):
        return 0.0
    denom = side[cross] - sn[cross]
    frac = side[cross] / denom
    hits = along[cross] + frac * (an[cross] - along[cross])
    hits = np.sort(hits)
    if len(hits) % 2 == 1:
        # tangential grazing produced an odd crossing count; drop the median
        hits = np.delete(hits, len(hits) // 2)
    return float(np.sum(hits[1::2] - hits[0::2]))


def rotate_points(points: np.ndarray, angle: float, center=(0.0, 0.0)) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    ca, sa = np.cos(angle), np.sin(angle)
    rot = np.array([[ca, -sa], [sa, ca]])
    return (points - c) @ rot.T + c
