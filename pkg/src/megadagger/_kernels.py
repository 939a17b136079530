"""Numba kernels for the per-step hot loops (grid raycasting, ray-box hits)."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def dda_cast(cells, clearance, res, ox, oy, x, y, angles, max_range, out):
    """Exact grid traversal; ``cells[j, i]`` is row j (y), column i (x).

    ``clearance[j, i]`` is a lower bound on the distance from any point of
    cell (i, j) to any occupied cell; the ray jumps ahead by it while it is
    large and finishes with cell-by-cell stepping.  Cells outside the grid
    count as occupied.
    """
    h, w = cells.shape
    for b in range(angles.shape[0]):
        dx = math.cos(angles[b])
        dy = math.sin(angles[b])
        t = 0.0
        while True:
            i = int(math.floor((x + t * dx - ox) / res))
            j = int(math.floor((y + t * dy - oy) / res))
            if i < 0 or j < 0 or i >= w or j >= h:
                break
            skip = clearance[j, i]
            if skip < 2.0 * res:
                break
            t += skip
            if t >= max_range:
                break
        if t >= max_range:
            out[b] = max_range
            continue
        out[b] = max(_dda_from(cells, res, ox, oy, x, y, dx, dy, t, max_range), 1e-6)


@njit(cache=True)
def _dda_from(cells, res, ox, oy, x, y, dx, dy, t0, max_range):
    h, w = cells.shape
    gx = (x + t0 * dx - ox) / res
    gy = (y + t0 * dy - oy) / res
    i = int(math.floor(gx))
    j = int(math.floor(gy))
    if i < 0 or j < 0 or i >= w or j >= h or cells[j, i]:
        return t0
    if dx > 0.0:
        step_i = 1
        t_max_x = t0 + ((i + 1) - gx) * res / dx
        t_delta_x = res / dx
    elif dx < 0.0:
        step_i = -1
        t_max_x = t0 + (gx - i) * res / -dx
        t_delta_x = res / -dx
    else:
        step_i = 0
        t_max_x = np.inf
        t_delta_x = np.inf
    if dy > 0.0:
        step_j = 1
        t_max_y = t0 + ((j + 1) - gy) * res / dy
        t_delta_y = res / dy
    elif dy < 0.0:
        step_j = -1
        t_max_y = t0 + (gy - j) * res / -dy
        t_delta_y = res / -dy
    else:
        step_j = 0
        t_max_y = np.inf
        t_delta_y = np.inf
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_delta_x
            i += step_i
        else:
            t = t_max_y
            t_max_y += t_delta_y
            j += step_j
        if t >= max_range:
            return max_range
        if i < 0 or j < 0 or i >= w or j >= h or cells[j, i]:
            return t


@njit(cache=True)
def lane_nearest(table, x0, y0, cell, xy, closed, x, y):
    """Nearest waypoint via a coarse lookup table plus a local search; k = -1 off-table."""
    i = int(math.floor((x - x0) / cell))
    j = int(math.floor((y - y0) / cell))
    if i < 0 or j < 0 or j >= table.shape[0] or i >= table.shape[1]:
        return -1.0, -1
    n = xy.shape[0]
    k0 = table[j, i]
    best = np.inf
    best_k = k0
    for off in range(-4, 5):
        k = k0 + off
        if closed:
            k = k % n
        elif k < 0 or k >= n:
            continue
        d2 = (xy[k, 0] - x) ** 2 + (xy[k, 1] - y) ** 2
        if d2 < best:
            best = d2
            best_k = k
    return math.sqrt(best), best_k


@njit(cache=True)
def lane_project(xy, cum, seg, length, closed, k, x, y):
    """Arc length of the closest point on the two segments adjacent to waypoint k."""
    n = xy.shape[0]
    best_d = np.inf
    best_s = 0.0
    for a in ((k - 1) % n, k):
        if not closed and a == n - 1:
            continue
        b = (a + 1) % n
        vx = xy[b, 0] - xy[a, 0]
        vy = xy[b, 1] - xy[a, 1]
        seg2 = vx * vx + vy * vy
        u = ((x - xy[a, 0]) * vx + (y - xy[a, 1]) * vy) / seg2
        u = min(1.0, max(0.0, u))
        qx = xy[a, 0] + u * vx
        qy = xy[a, 1] + u * vy
        d = math.hypot(x - qx, y - qy)
        if d < best_d:
            best_d = d
            best_s = cum[a] + u * seg[a]
    return best_s % length, best_d


@njit(cache=True)
def lookahead_search(wp, k, x, y, lookahead, window):
    """Point at distance ``lookahead`` on the polyline walking forward from waypoint k.

    Returns (found, x, y, speed); not found when waypoint k is already outside.
    """
    n = wp.shape[0]
    prev = k
    for off in range(window):
        j = (k + off) % n
        d = math.hypot(wp[j, 0] - x, wp[j, 1] - y)
        if d >= lookahead:
            if off == 0:
                return False, 0.0, 0.0, 0.0
            ax, ay, av = wp[prev, 0], wp[prev, 1], wp[prev, 2]
            dx, dy = wp[j, 0] - ax, wp[j, 1] - ay
            fx, fy = ax - x, ay - y
            qa = dx * dx + dy * dy
            qb = 2.0 * (fx * dx + fy * dy)
            qc = fx * fx + fy * fy - lookahead * lookahead
            u = (-qb + math.sqrt(max(qb * qb - 4.0 * qa * qc, 0.0))) / (2.0 * qa)
            u = min(1.0, max(0.0, u))
            return True, ax + u * dx, ay + u * dy, av + u * (wp[j, 2] - av)
        prev = j
    return False, 0.0, 0.0, 0.0


@njit(cache=True)
def ray_box_min(x, y, angles, cx, cy, heading, half_len, half_wid, out):
    """Clip ``out`` to the entry distance of each ray into an oriented box."""
    c = math.cos(heading)
    s = math.sin(heading)
    rx = x - cx
    ry = y - cy
    # ray origin in the box frame
    px = c * rx + s * ry
    py = -s * rx + c * ry
    if abs(px) <= half_len and abs(py) <= half_wid:
        return
    for b in range(angles.shape[0]):
        dxw = math.cos(angles[b])
        dyw = math.sin(angles[b])
        dx = c * dxw + s * dyw
        dy = -s * dxw + c * dyw
        t0 = -np.inf
        t1 = np.inf
        if abs(dx) < 1e-12:
            if abs(px) > half_len:
                continue
        else:
            a = (-half_len - px) / dx
            bb = (half_len - px) / dx
            if a > bb:
                a, bb = bb, a
            t0 = max(t0, a)
            t1 = min(t1, bb)
        if abs(dy) < 1e-12:
            if abs(py) > half_wid:
                continue
        else:
            a = (-half_wid - py) / dy
            bb = (half_wid - py) / dy
            if a > bb:
                a, bb = bb, a
            t0 = max(t0, a)
            t1 = min(t1, bb)
        if t0 <= t1 and t0 > 0.0 and t0 < out[b]:
            out[b] = max(t0, 1e-6)
