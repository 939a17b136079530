"""Two-car head-to-head episodes: reset, LiDAR observation, stepping and outcomes."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ._kernels import dda_cast, ray_box_min
from .config import Config
from .trackworld import TrackError, TrackWorld, beam_angles
from .vehicle import Action, VehicleParams, VehicleState, saturate, step_dynamics


class Outcome(str, enum.Enum):
    RUNNING = "Running"
    OVERTAKE = "Overtake"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class EnvState:
    ego: VehicleState
    opp: VehicleState
    step_index: int = 0
    outcome: Outcome = Outcome.RUNNING
    opp_lane: str = "left"
    seed: int = 0

    @property
    def done(self) -> bool:
        return self.outcome is not Outcome.RUNNING

    def vehicle(self, who: str) -> VehicleState:
        return self.ego if who == "ego" else self.opp

    def other(self, who: str) -> VehicleState:
        return self.opp if who == "ego" else self.ego


@dataclass(frozen=True)
class ScanObservation:
    ranges: np.ndarray
    ego_speed: float


def reset(world: TrackWorld, seed: int, cfg: Config = Config()) -> EnvState:
    """Opponent on a seed-chosen lane and station, ego ``gap_start`` behind on the centerline."""
    rng = np.random.default_rng(seed)
    lane_name = "left" if seed % 2 == 0 else "right"
    s0 = float(rng.uniform(0.0, world.length))
    cx, cy, _, _ = world.centerline.point_at(s0)
    lane = world.lane(lane_name)
    s_lane, _ = lane.project(cx, cy)
    ox, oy, oh, _ = lane.point_at(s_lane)
    ex, ey, eh, _ = world.centerline.point_at(s0 - cfg.sim.gap_start)
    return EnvState(ego=VehicleState(ex, ey, eh), opp=VehicleState(ox, oy, oh),
                    opp_lane=lane_name, seed=seed)


def footprint_corners(s: VehicleState, params: VehicleParams) -> np.ndarray:
    c, sn = math.cos(s.theta), math.sin(s.theta)
    hl, hw = params.length / 2, params.width / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -sn], [sn, c]])
    return local @ rot.T + (s.x, s.y)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals given as 4x2 corners."""
    for poly in (a, b):
        for k in range(2):
            edge = poly[k + 1] - poly[k]
            axis = np.array([-edge[1], edge[0]])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def cars_overlap(a: VehicleState, b: VehicleState, params: VehicleParams) -> bool:
    if math.hypot(a.x - b.x, a.y - b.y) > math.hypot(params.length, params.width):
        return False
    return boxes_overlap(footprint_corners(a, params), footprint_corners(b, params))


@lru_cache(maxsize=8)
def _perimeter_samples(length: float, width: float, spacing: float) -> np.ndarray:
    hl, hw = length / 2, width / 2
    pts = []
    for (x0, y0), (x1, y1) in (((hl, hw), (-hl, hw)), ((-hl, hw), (-hl, -hw)),
                               ((-hl, -hw), (hl, -hw)), ((hl, -hw), (hl, hw))):
        n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / spacing)))
        u = np.arange(n) / n
        pts.append(np.column_stack([x0 + u * (x1 - x0), y0 + u * (y1 - y0)]))
    return np.vstack(pts)


def hits_wall(world: TrackWorld, s: VehicleState, params: VehicleParams) -> bool:
    local = _perimeter_samples(params.length, params.width, world.grid.resolution / 2)
    c, sn = math.cos(s.theta), math.sin(s.theta)
    x = s.x + local[:, 0] * c - local[:, 1] * sn
    y = s.y + local[:, 0] * sn + local[:, 1] * c
    return bool(world.grid.occupied(x, y).any())


def observe(world: TrackWorld, env: EnvState, who: str = "ego", cfg: Config = Config()) -> ScanObservation:
    """LiDAR scan from ``who`` against the walls and the other car's footprint."""
    me, other = env.vehicle(who), env.other(who)
    g = world.grid
    if g.occupied(me.x, me.y):
        raise TrackError(f"{who} vehicle is inside a wall")
    lid = cfg.lidar
    angles = beam_angles(me.theta, lid.n_beams, lid.fov)
    out = np.empty(lid.n_beams)
    dda_cast(g.cells, g.clearance, g.resolution, g.origin[0], g.origin[1], me.x, me.y, angles, lid.max_range, out)
    p = cfg.vehicle
    if math.hypot(other.x - me.x, other.y - me.y) < lid.max_range + p.length:
        ray_box_min(me.x, me.y, angles, other.x, other.y, other.theta, p.length / 2, p.width / 2, out)
    return ScanObservation(out, me.v)


def step_env(world: TrackWorld, env: EnvState, a_ego: Action, a_opp: Action,
             cfg: Config = Config()) -> EnvState:
    """Advance both cars one control period and classify the result."""
    if env.done:
        raise RuntimeError(f"episode already finished ({env.outcome.value})")
    p = cfg.vehicle
    a_ego, a_opp = saturate(a_ego, p), saturate(a_opp, p)
    ego, opp = env.ego, env.opp
    for _ in range(cfg.sim.control_substeps):
        ego = step_dynamics(ego, a_ego, p, cfg.sim.physics_dt)
        opp = step_dynamics(opp, a_opp, p, cfg.sim.physics_dt)
    step = env.step_index + 1
    outcome = Outcome.RUNNING
    if hits_wall(world, ego, p) or cars_overlap(ego, opp, p):
        outcome = Outcome.COLLISION
    elif ego_lead(world, ego, opp) >= cfg.sim.overtake_margin:
        outcome = Outcome.OVERTAKE
    elif step >= cfg.sim.max_steps:
        outcome = Outcome.TIMEOUT
    return replace(env, ego=ego, opp=opp, step_index=step, outcome=outcome)


def ego_lead(world: TrackWorld, ego: VehicleState, opp: VehicleState) -> float:
    """Progress of the ego ahead of the opponent (negative while behind)."""
    s_ego, _ = world.centerline.project(ego.x, ego.y)
    s_opp, _ = world.centerline.project(opp.x, opp.y)
    return world.gap(s_opp, s_ego)


class TrajectoryLog:
    """Optional per-step CSV log of one rollout."""

    header = ["step", "ego_x", "ego_y", "ego_theta", "opp_x", "opp_y", "opp_theta",
              "steering", "speed", "controller", "outcome"]

    def __init__(self):
        self.rows = []

    def record(self, env: EnvState, action: Action, controller: str = "novice") -> None:
        e, o = env.ego, env.opp
        self.rows.append([env.step_index, e.x, e.y, e.theta, o.x, o.y, o.theta,
                          action.steering, action.speed, controller, env.outcome.value])

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            w.writerows(self.rows)
