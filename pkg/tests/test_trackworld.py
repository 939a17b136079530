import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from megadagger.trackworld import (SHIPPED_MAPS, Lane, OccupancyGrid, TrackError, beam_angles,
                                   load_shipped, load_track, make_world, nearest_boundary_point,
                                   progress, raycast, raymarch, save_track)

from conftest import square_loop, square_room


def test_cell_to_world_affine_map():
    g = OccupancyGrid(0.05, (-3.0, 7.5), np.ones((60, 60), bool))
    x, y = g.cell_to_world(20, 40)
    assert x == pytest.approx(-3.0 + 1.0)
    assert y == pytest.approx(7.5 + 2.0)
    assert g.world_to_cell(x + 0.01, y + 0.01) == (20, 40)


def test_synthetic_square_track_is_valid(room_world):
    w = room_world
    assert w.grid.is_closed()
    for lane in (w.centerline, w.lane_left, w.lane_right):
        assert not w.grid.occupied(lane.xy[:, 0], lane.xy[:, 1]).any()
        assert np.all(np.diff(lane.cumulative_arclength) > 0)
        assert np.allclose(lane.seg_lengths, 0.1, atol=0.01)
    # left lane of a counter-clockwise loop is the inner one
    assert w.lane_left.length < w.centerline.length < w.lane_right.length


def test_lane_on_wall_is_rejected():
    bad = Lane(np.array([[0.05, 5.0, 1.0], [5.0, 9.0, 1.0], [9.0, 5.0, 1.0], [5.0, 1.0, 1.0]]))
    with pytest.raises(TrackError, match="lane intersects boundary"):
        make_world(square_room(), square_loop(), lane_left=bad)


def test_open_boundary_is_rejected():
    g = square_room()
    cells = g.cells.copy()
    cells[0, 50] = False
    with pytest.raises(TrackError, match="open boundary"):
        make_world(OccupancyGrid(0.1, (0.0, 0.0), cells), square_loop())


def test_lane_invariants():
    with pytest.raises(TrackError):
        Lane(np.array([[0, 0, 1], [1, 0, 1]], float))
    with pytest.raises(TrackError):
        Lane(np.array([[0, 0, 1], [0, 0, 1], [1, 1, 1]], float))


def test_forward_beam_in_empty_room(room_world):
    # room interior spans [0.1, 9.9]; the far wall is 4.9 m from the center
    r = raycast(room_world, (5.0, 5.0, 0.0), 1, 0.0, 30.0)
    assert abs(r[0] - 4.9) <= room_world.grid.resolution


def test_ranges_clipped_and_bounded(room_world):
    r = raycast(room_world, (3.3, 6.1, 0.7), 360, 2 * math.pi, 30.0)
    assert np.all(r <= 30.0)
    assert np.all(r <= math.hypot(10, 10))
    assert np.all(r > 0)
    short = raycast(room_world, (3.3, 6.1, 0.7), 360, 2 * math.pi, 1.0)
    assert short.max() == 1.0


def test_default_scan_length(room_world):
    r = raycast(room_world, (5.0, 5.0, 0.0), 1080, 1.5 * math.pi, 10.0)
    assert r.shape == (1080,)


def test_beam_zero_is_rightmost():
    a = beam_angles(0.3, 5, math.pi)
    assert a[0] == pytest.approx(0.3 - math.pi / 2)
    assert a[-1] == pytest.approx(0.3 + math.pi / 2)
    assert np.all(np.diff(a) > 0)


def test_raycast_from_inside_wall_raises(room_world):
    with pytest.raises(TrackError):
        raycast(room_world, (0.05, 5.0, 0.0), 10, 1.0, 5.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 9.7), st.floats(0.3, 9.7), st.floats(-math.pi, math.pi))
def test_raycast_matches_marching_oracle(room_world, x, y, theta):
    fast = raycast(room_world, (x, y, theta), 90, 1.5 * math.pi, 10.0)
    slow = raymarch(room_world, (x, y, theta), 90, 1.5 * math.pi, 10.0)
    assert np.max(np.abs(fast - slow)) <= room_world.grid.resolution


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_raycast_exact_with_clutter(seed):
    """Isolated cells let a ray clip a corner for less than a marching step, so
    here the check is exactness: the reported point is occupied and every
    sample before it is free."""
    rng = np.random.default_rng(seed)
    cells = square_room(48, 0.1).cells.copy()
    cells |= rng.random(cells.shape) < 0.05
    g = OccupancyGrid(0.1, (-1.0, 2.0), cells)
    free = np.argwhere(~cells)
    j, i = free[rng.integers(len(free))]
    x, y = g.origin[0] + (i + rng.random()) * 0.1, g.origin[1] + (j + rng.random()) * 0.1
    w = make_world(square_room(48, 0.1), square_loop((2.4, 2.4), 1.2))
    w = type(w)(g, w.centerline, w.lane_left, w.lane_right)
    theta = rng.uniform(-math.pi, math.pi)
    angles = beam_angles(theta, 64, 2 * math.pi)
    fast = raycast(w, (x, y, theta), 64, 2 * math.pi, 6.0)
    slow = raymarch(w, (x, y, theta), 64, 2 * math.pi, 6.0)
    assert np.all(fast <= slow + 1e-9)
    for a, r in zip(angles, fast):
        c, s_ = math.cos(a), math.sin(a)
        if r < 6.0:
            assert g.occupied(x + c * (r + 1e-7), y + s_ * (r + 1e-7))
        t = np.arange(0.0, r - 1e-7, 0.001)
        assert not g.occupied(x + c * t, y + s_ * t).any()


def _exhaustive_nearest(g, x, y):
    j, i = np.nonzero(g.cells)
    flat = j * g.width + i
    cx, cy = g.cell_center(i, j)
    d = np.hypot(cx - x, cy - y)
    best = np.flatnonzero(d <= d.min() * (1 + 1e-12) + 1e-12)
    k = best[np.argmin(flat[best])]
    return cx[k], cy[k], d[k]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(8, 64))
def test_nearest_boundary_matches_exhaustive_scan(seed, n):
    rng = np.random.default_rng(seed)
    cells = square_room(n, 0.05).cells.copy()
    cells |= rng.random(cells.shape) < 0.08
    g = OccupancyGrid(0.05, (0.0, 0.0), cells)
    free = np.argwhere(~cells)
    if len(free) == 0:
        return
    j, i = free[rng.integers(len(free))]
    x, y = (i + rng.random()) * 0.05, (j + rng.random()) * 0.05
    px, py, d = g.nearest_occupied(x, y)
    ex, ey, ed = _exhaustive_nearest(g, x, y)
    assert d == pytest.approx(ed, abs=1e-12)
    assert (px, py) == pytest.approx((ex, ey))


def test_nearest_boundary_near_straight_wall(room_world):
    px, py = nearest_boundary_point(room_world, (5.02, 0.3))
    assert py == pytest.approx(0.05)
    assert abs(math.hypot(px - 5.02, py - 0.3) - 0.2) <= room_world.grid.resolution


def test_nearest_boundary_tie_goes_to_lowest_index():
    g = square_room(11, 1.0)  # interior cells 1..9, center cell (5, 5)
    px, py, d = g.nearest_occupied(5.5, 5.5)
    assert d == pytest.approx(5.0)
    assert (px, py) == (5.5, 0.5)  # bottom wall holds the lowest flat index


def test_nearest_boundary_touching_wall(room_world):
    _, _, d = room_world.grid.nearest_occupied(0.1001, 4.0)
    assert d <= room_world.grid.resolution


def test_progress_on_waypoint(room_world):
    lane = room_world.centerline
    for k in (0, 17, 100, len(lane) - 1):
        x, y = lane.xy[k]
        assert progress(room_world, (x, y)) == pytest.approx(lane.cumulative_arclength[k], abs=1e-9)


def test_progress_difference_on_straight(room_world):
    # the first straight of the circuit runs along +y at x = 8 for 3.5 <= y <= 6.5
    s0 = progress(room_world, (8.0, 3.6))
    s1 = progress(room_world, (8.0, 6.4))
    assert s1 - s0 == pytest.approx(2.8, abs=1e-3)


def test_progress_wraps_at_start(room_world):
    lane = room_world.centerline
    x0, y0 = lane.xy[0]
    x1, y1, _, _ = lane.point_at(-0.01)
    assert progress(room_world, (x0, y0)) == pytest.approx(0.0, abs=1e-9)
    assert progress(room_world, (x1, y1)) == pytest.approx(lane.length - 0.01, abs=1e-6)
    x2, y2, _, _ = lane.point_at(0.02)
    assert progress(room_world, (x2, y2)) == pytest.approx(0.02, abs=1e-6)


@pytest.mark.parametrize("name", SHIPPED_MAPS)
def test_progress_monotone_along_traversal(name):
    w = load_shipped(name)
    s = np.array([progress(w, w.centerline.point_at(t)[:2]) for t in np.arange(0, w.length, 0.37)])
    steps = np.diff(s) % w.length
    assert np.all(steps < w.length / 2)


@pytest.mark.parametrize("name", SHIPPED_MAPS)
def test_shipped_maps_satisfy_invariants(name):
    w = load_shipped(name)
    assert w.grid.is_closed()
    ref = w.centerline.tangents()
    for lane in (w.lane_left, w.lane_right):
        assert not w.grid.occupied(lane.xy[:, 0], lane.xy[:, 1]).any()
        idx = [w.centerline.nearest(x, y)[1] for x, y in lane.xy[::25]]
        assert np.mean(np.sum(lane.tangents()[::25] * ref[idx], axis=1)) > 0.9


def test_save_and_load_round_trip(tmp_path, room_world):
    image, meta = save_track(room_world, tmp_path, "room")
    w = load_track(image, meta)
    assert np.array_equal(w.grid.cells, room_world.grid.cells)
    assert w.grid.resolution == room_world.grid.resolution
    assert w.length == pytest.approx(room_world.length, rel=1e-4)


def test_load_track_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_track(tmp_path / "nope.pgm", tmp_path / "nope.txt")


def test_gap_wraps_into_half_open_interval(room_world):
    L = room_world.length
    assert room_world.gap(L - 1.0, 1.0) == pytest.approx(2.0)
    assert room_world.gap(1.0, L - 1.0) == pytest.approx(-2.0)


@pytest.mark.parametrize("name", ["map1", "map2"])
def test_raycast_disagreements_on_shipped_maps_are_marcher_misses(name):
    """Rays grazing the wall staircase can clip a cell corner for less than one
    marching step.  Wherever the two methods disagree by more than a cell, the
    DDA range must be the shorter one and must be exact."""
    w = load_shipped(name)
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 15:
        s = rng.uniform(0, w.length)
        x, y, h, _ = w.centerline.point_at(s)
        off = rng.uniform(-2.0, 2.0)
        x, y = x - off * math.sin(h), y + off * math.cos(h)
        if not w.is_free(x, y):
            continue
        checked += 1
        theta = rng.uniform(-math.pi, math.pi)
        fast = raycast(w, (x, y, theta), 1080, 1.5 * math.pi, 10.0)
        slow = raymarch(w, (x, y, theta), 1080, 1.5 * math.pi, 10.0)
        angles = beam_angles(theta, 1080, 1.5 * math.pi)
        for k in np.flatnonzero(np.abs(fast - slow) > w.grid.resolution):
            r, c, s_ = fast[k], math.cos(angles[k]), math.sin(angles[k])
            assert r < slow[k]
            assert w.grid.occupied(x + c * (r + 1e-7), y + s_ * (r + 1e-7))
            t = np.arange(0.0, r - 1e-7, 0.0005)
            assert not w.grid.occupied(x + c * t, y + s_ * t).any()
