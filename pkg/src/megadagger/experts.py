"""Scripted experts: pure pursuit on a lane, the lane switcher planner, steering
reversal with probability P(U), and the min-clearance takeover gate."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import Config, GateConfig
from .racesim import EnvState, ScanObservation
from ._kernels import lookahead_search
from .trackworld import LANE_SPACING, Lane, TrackWorld
from .vehicle import Action, VehicleState

__all__ = ["ExpertSpec", "GateConfig", "Gate", "Expert", "pure_pursuit", "lane_switcher",
           "imperfect_expert", "gate", "make_experts", "opponent_action"]


@dataclass(frozen=True)
class ExpertSpec:
    expert_id: int = 1
    pu: float = 0.0
    seed: int = 0
    lookahead: float = 1.2
    switch_trigger: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.pu <= 1.0:
            raise ValueError("pu must lie in [0, 1]")
        if self.lookahead <= 0:
            raise ValueError("lookahead must be positive")


def lookahead_point(lane: Lane, s: VehicleState, lookahead: float) -> tuple[float, float, float]:
    """First lane point ahead of the car at distance ``lookahead``.

    When the car is farther than ``lookahead`` from the lane (mid lane change) the
    point ``lookahead`` metres of arc ahead of the projection is used instead.
    """
    _, k = lane.nearest(s.x, s.y)
    window = int(math.ceil(3 * lookahead / LANE_SPACING)) + 2
    found, gx, gy, v = lookahead_search(lane.waypoints, k, s.x, s.y, lookahead, window)
    if found:
        return gx, gy, v
    s_proj, _ = lane.project(s.x, s.y)
    x, y, _, v = lane.point_at(s_proj + lookahead)
    return x, y, v


def pure_pursuit(lane: Lane, s: VehicleState, lookahead: float, wheelbase: float) -> Action:
    """Steering ``atan(2 L sin(alpha) / l_d)`` toward the lookahead point; speed from the lane."""
    gx, gy, speed = lookahead_point(lane, s, lookahead)
    alpha = math.atan2(gy - s.y, gx - s.x) - s.theta
    dist = max(lookahead, math.hypot(gx - s.x, gy - s.y))
    return Action(math.atan(2 * wheelbase * math.sin(alpha) / dist), speed)


def lane_switcher(world: TrackWorld, env: EnvState, current_lane: str, spec: ExpertSpec,
                  who: str = "ego", cfg: Config = Config(),
                  speed_scale: float = 1.0) -> tuple[Action, str]:
    """Track ``current_lane``; switch first if the other car sits on it within
    ``switch_trigger`` metres ahead."""
    me, other = env.vehicle(who), env.other(who)
    lane = current_lane
    if world.lane_of(other.x, other.y) == lane:
        s_me, _ = world.centerline.project(me.x, me.y)
        s_other, _ = world.centerline.project(other.x, other.y)
        ahead = world.gap(s_me, s_other)
        if 0.0 < ahead <= spec.switch_trigger:
            lane = "right" if lane == "left" else "left"
    a = pure_pursuit(world.lane(lane), me, spec.lookahead, cfg.vehicle.wheelbase)
    if speed_scale != 1.0:
        a = Action(a.steering, a.speed * speed_scale)
    return a, lane


def imperfect_expert(a: Action, spec: ExpertSpec, rng: np.random.Generator) -> Action:
    """Negate the steering with probability ``spec.pu`` (one draw per call)."""
    if rng.random() < spec.pu:
        return Action(-a.steering, a.speed)
    return a


def gate(obs: ScanObservation, cfg: GateConfig, currently_expert: bool,
         safe_steps: int = 0) -> tuple[bool, int]:
    """Hysteresis gate on the minimum LiDAR range.

    Returns the new control holder (True = expert) and the updated count of
    consecutive clear steps while the expert drives.
    """
    clearance = float(np.min(obs.ranges))
    if not currently_expert:
        return (True, 0) if clearance < cfg.d_take else (False, 0)
    safe_steps = safe_steps + 1 if clearance > cfg.d_release else 0
    if safe_steps >= cfg.n_safe:
        return False, 0
    return True, safe_steps


class Gate:
    def __init__(self, cfg: GateConfig):
        self.cfg = cfg
        self.expert = False
        self.safe_steps = 0

    def __call__(self, obs: ScanObservation) -> bool:
        self.expert, self.safe_steps = gate(obs, self.cfg, self.expert, self.safe_steps)
        return self.expert


class Expert:
    """A seeded imperfect lane switcher driving the ego car."""

    def __init__(self, spec: ExpertSpec, stream_seed: int = 0):
        self.spec = spec
        self.rng = np.random.default_rng([spec.seed, stream_seed])
        self.lane = "left"

    def engage(self, world: TrackWorld, env: EnvState) -> None:
        self.lane = world.lane_of(env.ego.x, env.ego.y)

    def act(self, world: TrackWorld, env: EnvState, cfg: Config = Config()) -> Action:
        a, self.lane = lane_switcher(world, env, self.lane, self.spec, "ego", cfg)
        return imperfect_expert(a, self.spec, self.rng)


def opponent_action(world: TrackWorld, env: EnvState, cfg: Config,
                    spec: ExpertSpec | None = None) -> tuple[Action, str]:
    spec = spec or ExpertSpec(expert_id=0, lookahead=cfg.experts.lookahead,
                              switch_trigger=cfg.experts.switch_trigger)
    return lane_switcher(world, env, env.opp_lane, spec, "opp", cfg,
                         speed_scale=cfg.sim.opp_speed_scale)


def make_experts(cfg: Config) -> list[ExpertSpec]:
    """Expert family ``1..count``; with more than one expert, pu and lookahead
    are jittered by up to ``experts.jitter`` (relative) so they fail differently."""
    e = cfg.experts
    rng = np.random.default_rng([e.seed, 7])
    specs = []
    for k in range(1, e.count + 1):
        pu, la = e.pu, e.lookahead
        if e.count > 1 and e.jitter > 0:
            pu = min(1.0, max(0.0, pu * (1 + rng.uniform(-e.jitter, e.jitter))))
            la = la * (1 + rng.uniform(-e.jitter, e.jitter))
        specs.append(ExpertSpec(expert_id=k, pu=pu, seed=e.seed * 1000 + k, lookahead=la,
                                switch_trigger=e.switch_trigger))
    for eid, name, value in cfg.expert_overrides:
        specs[eid - 1] = replace(specs[eid - 1], **{name: value})
    return specs
