"""Track maps: occupancy grid, centerline and the two racing lanes.

A map on disk is an 8-bit portable graymap plus a plain-text ``key=value``
metadata file.  Lane and centerline waypoints are CSV files with columns
``x_m, y_m, speed_mps``.  Cell ``(i, j)`` is column ``i`` (x) and row ``j``
(y); row 0 is the bottom image row, as in ROS map files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from scipy.ndimage import distance_transform_edt

from ._kernels import dda_cast, lane_nearest, lane_project

LANE_SPACING = 0.1
LANE_OFFSET = 0.8
LANE_CLEARANCE = 0.5


class TrackError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        if self.resolution <= 0:
            raise TrackError("resolution must be positive")
        object.__setattr__(self, "cells", np.ascontiguousarray(self.cells, dtype=np.bool_))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def cell_to_world(self, i: int, j: int) -> tuple[float, float]:
        """Lower-left corner of cell ``(i, j)``."""
        return (self.origin[0] + i * self.resolution, self.origin[1] + j * self.resolution)

    def cell_center(self, i, j):
        return (self.origin[0] + (np.asarray(i) + 0.5) * self.resolution,
                self.origin[1] + (np.asarray(j) + 0.5) * self.resolution)

    def world_to_cell(self, x, y):
        i = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(np.int64)
        j = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(np.int64)
        return i, j

    def occupied(self, x, y):
        """Vectorized occupancy lookup; points off the grid are occupied."""
        if isinstance(x, float) and isinstance(y, float):
            i = math.floor((x - self.origin[0]) / self.resolution)
            j = math.floor((y - self.origin[1]) / self.resolution)
            if 0 <= i < self.width and 0 <= j < self.height:
                return bool(self.cells[j, i])
            return True
        i, j = self.world_to_cell(x, y)
        inside = (i >= 0) & (j >= 0) & (i < self.width) & (j < self.height)
        out = np.ones(np.shape(i), dtype=bool)
        out[inside] = self.cells[j[inside], i[inside]]
        return out

    def is_closed(self) -> bool:
        c = self.cells
        return bool(c[0, :].all() and c[-1, :].all() and c[:, 0].all() and c[:, -1].all())

    @cached_property
    def clearance(self) -> np.ndarray:
        """Lower bound on the distance from any point of a cell to any occupied cell."""
        d = distance_transform_edt(~self.cells) * self.resolution
        return np.maximum(d - self.resolution * math.sqrt(2.0), 0.0)

    @cached_property
    def _boundary(self) -> tuple[np.ndarray, cKDTree]:
        # occupied cells with at least one free 4-neighbour; the nearest occupied
        # cell to any free point is always one of these
        occ = self.cells
        free = ~occ
        edge = np.zeros_like(occ)
        edge[1:, :] |= free[:-1, :]
        edge[:-1, :] |= free[1:, :]
        edge[:, 1:] |= free[:, :-1]
        edge[:, :-1] |= free[:, 1:]
        flat = np.flatnonzero((occ & edge).ravel())  # ascending cell index
        j, i = np.divmod(flat, self.width)
        cx, cy = self.cell_center(i, j)
        return flat, cKDTree(np.column_stack([cx, cy]))

    def nearest_occupied(self, x: float, y: float) -> tuple[float, float, float]:
        """Center of the nearest occupied cell and its distance; ties go to the lowest index."""
        flat, tree = self._boundary
        d, k = tree.query((x, y))
        cand = tree.query_ball_point((x, y), d * (1 + 1e-12) + 1e-12)
        if len(cand) > 1:
            k = min(cand, key=lambda c: flat[c])
        px, py = tree.data[k]
        return float(px), float(py), float(d)


@dataclass(frozen=True, eq=False)
class Lane:
    waypoints: np.ndarray  # (N, 3): x, y, target speed
    closed: bool = True

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=np.float64)
        if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 3:
            raise TrackError("a lane needs at least 3 waypoints of (x, y, speed)")
        seg = np.hypot(np.diff(wp[:, 0]), np.diff(wp[:, 1]))
        if np.any(seg <= 0):
            raise TrackError("consecutive lane waypoints must be distinct")
        object.__setattr__(self, "waypoints", wp)

    @cached_property
    def seg_lengths(self) -> np.ndarray:
        xy = self.xy
        nxt = np.roll(xy, -1, axis=0)
        return np.hypot(*(nxt - xy).T)

    @cached_property
    def cumulative_arclength(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.seg_lengths[:-1])])

    @property
    def xy(self) -> np.ndarray:
        return self.waypoints[:, :2]

    @property
    def speeds(self) -> np.ndarray:
        return self.waypoints[:, 2]

    @cached_property
    def length(self) -> float:
        if self.closed:
            return float(self.seg_lengths.sum())
        return float(self.cumulative_arclength[-1])

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.xy)

    def __len__(self):
        return len(self.waypoints)

    @cached_property
    def _lookup(self) -> tuple[float, float, float, np.ndarray]:
        # coarse table of the nearest waypoint per 0.1 m cell around the lane
        cell, margin = 0.1, 8.0
        x0, y0 = self.xy.min(axis=0) - margin
        x1, y1 = self.xy.max(axis=0) + margin
        nx, ny = int((x1 - x0) / cell) + 1, int((y1 - y0) / cell) + 1
        gx, gy = np.meshgrid(x0 + (np.arange(nx) + 0.5) * cell, y0 + (np.arange(ny) + 0.5) * cell)
        _, idx = self._tree.query(np.column_stack([gx.ravel(), gy.ravel()]))
        return float(x0), float(y0), cell, idx.reshape(ny, nx).astype(np.int64)

    def nearest(self, x: float, y: float) -> tuple[float, int]:
        """Distance to and index of the nearest waypoint."""
        x0, y0, cell, table = self._lookup
        d, k = lane_nearest(table, x0, y0, cell, self._xy, self.closed, float(x), float(y))
        if k < 0:
            d, k = self._tree.query((x, y))
        return float(d), int(k)

    @cached_property
    def _xy(self) -> np.ndarray:
        return np.ascontiguousarray(self.xy)

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Arc length of the closest point on the polyline, and the distance to it."""
        _, k = self.nearest(x, y)
        return lane_project(self._xy, self.cumulative_arclength, self.seg_lengths,
                            self.length, self.closed, k, float(x), float(y))

    def resample(self, spacing: float = LANE_SPACING) -> "Lane":
        n = max(3, int(round(self.length / spacing)))
        wp = self.waypoints
        s = self.cumulative_arclength
        if self.closed:
            s = np.append(s, self.length)
            wp = np.vstack([wp, wp[:1]])
        s_new = np.arange(n) * (self.length / (n if self.closed else n - 1))
        cols = [np.interp(s_new, s, wp[:, c]) for c in range(3)]
        return Lane(np.column_stack(cols), self.closed)

    def point_at(self, s: float) -> tuple[float, float, float, float]:
        """Interpolated ``(x, y, heading, speed)`` at arc length ``s``."""
        s = s % self.length if self.closed else min(max(s, 0.0), self.length)
        cum = self.cumulative_arclength
        a = int(np.searchsorted(cum, s, side="right") - 1)
        b = (a + 1) % len(self)
        u = (s - cum[a]) / self.seg_lengths[a]
        pa, pb = self.waypoints[a], self.waypoints[b]
        x, y, v = pa + u * (pb - pa)
        return float(x), float(y), math.atan2(pb[1] - pa[1], pb[0] - pa[0]), float(v)

    def reversed(self) -> "Lane":
        return Lane(self.waypoints[::-1].copy(), self.closed)

    def tangents(self) -> np.ndarray:
        d = np.roll(self.xy, -1, axis=0) - np.roll(self.xy, 1, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class TrackWorld:
    grid: OccupancyGrid
    centerline: Lane
    lane_left: Lane
    lane_right: Lane
    name: str = "track"

    def lane(self, which: str) -> Lane:
        return self.lane_left if which == "left" else self.lane_right

    @property
    def length(self) -> float:
        return self.centerline.length

    def is_free(self, x: float, y: float) -> bool:
        return not bool(self.grid.occupied(x, y))

    def lane_of(self, x: float, y: float) -> str:
        """Lane whose nearest waypoint is closer (ties go left)."""
        dl, _ = self.lane_left.nearest(x, y)
        dr, _ = self.lane_right.nearest(x, y)
        return "left" if dl <= dr else "right"

    def gap(self, s_from: float, s_to: float) -> float:
        """Signed arc-length from ``s_from`` to ``s_to`` wrapped into (-L/2, L/2]."""
        L = self.length
        d = (s_to - s_from) % L
        return d - L if d > L / 2 else d


def beam_angles(theta: float, n_beams: int, fov: float) -> np.ndarray:
    """Beam headings, rightmost first, spanning ``[theta - fov/2, theta + fov/2]``."""
    if n_beams == 1:
        return np.array([theta])
    return theta - fov / 2 + fov * np.arange(n_beams) / (n_beams - 1)


def raycast(world: TrackWorld, pose, n_beams: int, fov: float, max_range: float) -> np.ndarray:
    """Distance to the first occupied cell along each beam, clipped to ``max_range``."""
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    x, y, theta = pose
    g = world.grid
    if g.occupied(x, y):
        raise TrackError(f"pose ({x:.3f}, {y:.3f}) lies inside an occupied cell")
    out = np.empty(n_beams)
    dda_cast(g.cells, g.clearance, g.resolution, g.origin[0], g.origin[1], float(x), float(y),
             beam_angles(theta, n_beams, fov), float(max_range), out)
    return out


def raymarch(world: TrackWorld, pose, n_beams: int, fov: float, max_range: float,
             step: float | None = None, block: int = 128) -> np.ndarray:
    """Fixed-step ray marching; slow, kept as an independent reference for :func:`raycast`.

    Samples are taken at ``step, 2 step, ...`` (default ``resolution / 10``); a
    beam reports its first occupied sample.  Samples are processed ``block`` at a
    time so beams that already hit stop early.
    """
    x, y, theta = pose
    g = world.grid
    step = g.resolution / 10 if step is None else step
    n_samples = int(math.ceil(max_range / step))
    angles = beam_angles(theta, n_beams, fov)
    c, s = np.cos(angles), np.sin(angles)
    # cell coordinates along each beam are linear in t
    fi0, fj0 = (x - g.origin[0]) / g.resolution, (y - g.origin[1]) / g.resolution
    ci, cj = c / g.resolution, s / g.resolution
    # one ring of occupied padding stands in for "off the grid is occupied"
    padded = np.pad(g.cells, 1, constant_values=True)
    h, w = padded.shape
    out = np.full(n_beams, float(max_range))
    active = np.arange(n_beams)
    for start in range(0, n_samples, block):
        if len(active) == 0:
            break
        t = np.arange(start + 1, min(start + block, n_samples) + 1) * step
        i = np.clip(np.floor(fi0 + ci[active, None] * t[None, :]).astype(np.int64) + 1, 0, w - 1)
        j = np.clip(np.floor(fj0 + cj[active, None] * t[None, :]).astype(np.int64) + 1, 0, h - 1)
        hit = padded[j, i]
        any_hit = hit.any(axis=1)
        out[active[any_hit]] = np.minimum(t[hit[any_hit].argmax(axis=1)], max_range)
        active = active[~any_hit]
    return out


def nearest_boundary_point(world: TrackWorld, p) -> tuple[float, float]:
    x, y, _ = world.grid.nearest_occupied(float(p[0]), float(p[1]))
    return x, y


def progress(world: TrackWorld, p) -> float:
    """Arc-length station of the closest centerline point, in ``[0, length)``."""
    s, _ = world.centerline.project(float(p[0]), float(p[1]))
    return s


# --- construction and IO --------------------------------------------------

def offset_lane(grid: OccupancyGrid, centerline: Lane, offset: float,
                clearance: float = LANE_CLEARANCE) -> Lane:
    """Shift the centerline by ``offset`` along its left normal, pulling points
    back toward the centerline wherever wall clearance is short."""
    tang = centerline.tangents()
    normal = np.column_stack([-tang[:, 1], tang[:, 0]])
    pts = []
    for k, (cx, cy, v) in enumerate(centerline.waypoints):
        off = offset
        while True:
            px, py = cx + off * normal[k, 0], cy + off * normal[k, 1]
            if not grid.occupied(px, py) and grid.nearest_occupied(px, py)[2] >= clearance:
                break
            if abs(off) < 1e-9:
                break
            off = math.copysign(max(0.0, abs(off) - grid.resolution), off)
        pts.append((px, py, v))
    return Lane(np.array(pts)).resample()


def orient_like(lane: Lane, ref: Lane) -> Lane:
    """Reverse ``lane`` if it runs against the direction of ``ref``."""
    t = lane.tangents()
    ref_t = ref.tangents()
    idx = np.array([ref.nearest(x, y)[1] for x, y in lane.xy])
    return lane if np.mean(np.sum(t * ref_t[idx], axis=1)) >= 0 else lane.reversed()


def make_world(grid: OccupancyGrid, centerline: Lane, lane_left: Lane | None = None,
               lane_right: Lane | None = None, lane_offset: float = LANE_OFFSET,
               spacing: float = LANE_SPACING, name: str = "track") -> TrackWorld:
    if not grid.is_closed():
        raise TrackError("open boundary: every border cell must be occupied")
    centerline = centerline.resample(spacing)
    if lane_left is None:
        lane_left = offset_lane(grid, centerline, lane_offset)
    if lane_right is None:
        lane_right = offset_lane(grid, centerline, -lane_offset)
    lanes = []
    for lane in (centerline, lane_left, lane_right):
        lane = orient_like(lane.resample(spacing), centerline)
        if grid.occupied(lane.xy[:, 0], lane.xy[:, 1]).any():
            raise TrackError("lane intersects boundary")
        lanes.append(lane)
    return TrackWorld(grid, lanes[0], lanes[1], lanes[2], name)


def read_lane_csv(path: str | Path) -> Lane:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"lane file not found: {path}")
    data = np.genfromtxt(path, delimiter=",", names=True, comments="#")
    missing = {"x_m", "y_m", "speed_mps"} - set(data.dtype.names or ())
    if missing:
        raise TrackError(f"{path.name}: missing columns {sorted(missing)}")
    return Lane(np.column_stack([data["x_m"], data["y_m"], data["speed_mps"]]))


def write_lane_csv(path: str | Path, lane: Lane) -> None:
    np.savetxt(path, lane.waypoints, delimiter=",", header="x_m,y_m,speed_mps",
               comments="", fmt="%.6f")


def read_metadata(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metadata file not found: {path}")
    meta = {}
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def load_track(map_image_path: str | Path, metadata_path: str | Path) -> TrackWorld:
    map_image_path = Path(map_image_path)
    metadata_path = Path(metadata_path)
    if not map_image_path.exists():
        raise FileNotFoundError(f"map image not found: {map_image_path}")
    meta = read_metadata(metadata_path)
    for key in ("resolution", "origin_x", "origin_y", "centerline"):
        if key not in meta:
            raise TrackError(f"metadata missing key {key!r}")
    pixels = np.asarray(Image.open(map_image_path).convert("L"))
    threshold = float(meta.get("occupied_threshold", 128))
    grid = OccupancyGrid(float(meta["resolution"]),
                         (float(meta["origin_x"]), float(meta["origin_y"])),
                         (pixels < threshold)[::-1])
    base = metadata_path.parent
    centerline = read_lane_csv(base / meta["centerline"])
    left = read_lane_csv(base / meta["lane_left"]) if "lane_left" in meta else None
    right = read_lane_csv(base / meta["lane_right"]) if "lane_right" in meta else None
    return make_world(grid, centerline, left, right,
                      lane_offset=float(meta.get("lane_offset", LANE_OFFSET)),
                      spacing=float(meta.get("lane_spacing", LANE_SPACING)),
                      name=meta.get("name", map_image_path.stem))


def save_track(world: TrackWorld, directory: str | Path, name: str) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    g = world.grid
    img = np.where(g.cells[::-1], 0, 254).astype(np.uint8)
    image_path = directory / f"{name}.pgm"
    Image.fromarray(img, mode="L").save(image_path)
    for tag, lane in (("centerline", world.centerline), ("lane_left", world.lane_left),
                      ("lane_right", world.lane_right)):
        write_lane_csv(directory / f"{name}_{tag}.csv", lane)
    meta_path = directory / f"{name}.txt"
    meta_path.write_text(
        f"name={name}\nresolution={g.resolution!r}\norigin_x={g.origin[0]!r}\n"
        f"origin_y={g.origin[1]!r}\noccupied_threshold=128\n"
        f"centerline={name}_centerline.csv\nlane_left={name}_lane_left.csv\n"
        f"lane_right={name}_lane_right.csv\nlane_spacing={LANE_SPACING!r}\n")
    return image_path, meta_path


MAP_DIR = Path(__file__).parent / "maps"
SHIPPED_MAPS = ("map1", "map2")


def load_shipped(name: str) -> TrackWorld:
    """Load one of the bundled circuits by name, or a map from ``path/to/name.txt``."""
    p = Path(name)
    if p.suffix == ".txt" and p.exists():
        meta = read_metadata(p)
        image = p.parent / meta.get("image", p.stem + ".pgm")
        return load_track(image, p)
    if name not in SHIPPED_MAPS:
        raise TrackError(f"unknown map {name!r}; shipped maps: {', '.join(SHIPPED_MAPS)}")
    return _load_cached(name)


_CACHE: dict[str, TrackWorld] = {}


def _load_cached(name: str) -> TrackWorld:
    if name not in _CACHE:
        _CACHE[name] = load_track(MAP_DIR / f"{name}.pgm", MAP_DIR / f"{name}.txt")
    return _CACHE[name]
