"""Synthetic closed circuits used as the shipped maps."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .trackworld import Lane, OccupancyGrid, TrackWorld, make_world


def stadium(straight: float = 24.0, radius: float = 7.0, n: int = 2000) -> np.ndarray:
    """Counter-clockwise stadium centerline starting mid-way along the bottom straight."""
    per = 2 * straight + 2 * np.pi * radius
    s = np.linspace(0, per, n, endpoint=False)
    pts = np.empty((n, 2))
    for k, sk in enumerate(s):
        sk = (sk + straight / 2) % per
        if sk < straight:
            pts[k] = (sk - straight / 2, -radius)
        elif sk < straight + np.pi * radius:
            a = -np.pi / 2 + (sk - straight) / radius
            pts[k] = (straight / 2 + radius * np.cos(a), radius * np.sin(a))
        elif sk < 2 * straight + np.pi * radius:
            pts[k] = (straight / 2 - (sk - straight - np.pi * radius), radius)
        else:
            a = np.pi / 2 + (sk - 2 * straight - np.pi * radius) / radius
            pts[k] = (-straight / 2 + radius * np.cos(a), radius * np.sin(a))
    return pts


def lobed(base: float = 13.0, terms=((2, 2.5, 0.0), (3, 1.2, 0.7)), n: int = 2000) -> np.ndarray:
    """Counter-clockwise polar curve ``r(phi) = base + sum a cos(k phi + p)``."""
    phi = np.linspace(0, 2 * np.pi, n, endpoint=False)
    r = np.full(n, base)
    for k, a, p in terms:
        r += a * np.cos(k * phi + p)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def curvature_radius(xy: np.ndarray) -> np.ndarray:
    d1 = (np.roll(xy, -1, 0) - np.roll(xy, 1, 0)) / 2
    d2 = np.roll(xy, -1, 0) - 2 * xy + np.roll(xy, 1, 0)
    num = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return np.linalg.norm(d1, axis=1) ** 3 / np.maximum(num, 1e-12)


def speed_profile(xy: np.ndarray, lateral_accel: float = 3.5, v_min: float = 3.0,
                  v_max: float = 6.0, window: int = 60) -> np.ndarray:
    v = np.clip(np.sqrt(lateral_accel * curvature_radius(xy)), v_min, v_max)
    # look-ahead minimum so the car is already slow when entering a bend
    n = len(v)
    idx = (np.arange(n)[:, None] + np.arange(-window // 3, window)[None, :]) % n
    return v[idx].min(axis=1)


def build_world(centerline_xy: np.ndarray, half_width: float = 2.4, resolution: float = 0.05,
                margin: float = 1.0, name: str = "track") -> TrackWorld:
    lo = centerline_xy.min(axis=0) - half_width - margin
    hi = centerline_xy.max(axis=0) + half_width + margin
    w, h = np.ceil((hi - lo) / resolution).astype(int)
    ii, jj = np.meshgrid(np.arange(w), np.arange(h))
    centers = np.column_stack([lo[0] + (ii.ravel() + 0.5) * resolution,
                               lo[1] + (jj.ravel() + 0.5) * resolution])
    # densify so distance-to-polyline is accurate to a millimetre or so
    closed = np.vstack([centerline_xy, centerline_xy[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    s = np.concatenate([[0], np.cumsum(seg)])
    dense_s = np.arange(0, s[-1], 0.01)
    dense = np.column_stack([np.interp(dense_s, s, closed[:, 0]), np.interp(dense_s, s, closed[:, 1])])
    dist, _ = cKDTree(dense).query(centers)
    occ = (dist > half_width).reshape(h, w)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    grid = OccupancyGrid(resolution, (float(lo[0]), float(lo[1])), occ)
    speeds = speed_profile(centerline_xy)
    center = Lane(np.column_stack([centerline_xy, speeds]))
    return make_world(grid, center, name=name)


def map1() -> TrackWorld:
    return build_world(stadium(), name="map1")


def map2() -> TrackWorld:
    return build_world(lobed(), name="map2")
