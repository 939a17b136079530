"""Barrier value, discrete-time safety score, and the unsafe-demonstration filter.

The safety score of step ``t`` is ``sigma = h(t+1) - (1 - gamma) h(t)`` with
``h`` the squared clearance to the nearest obstacle minus ``alpha**2``.  A
takeover segment is cut at its first negative score, together with the
``beta`` steps leading up to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SafetyConfig
from .racesim import EnvState
from .trackworld import TrackWorld
from .vehicle import Action

__all__ = ["SafetyConfig", "Demonstration", "cbf_value", "obstacle_point", "barrier",
           "safety_score", "data_filter", "random_truncate", "removal_ratio"]


@dataclass
class Demonstration:
    obs: np.ndarray  # downsampled, normalized scan (108,)
    action: Action
    sigma: float = 0.0
    v: float = 0.0
    expert_id: int = 0
    rollout_id: int = 0
    step_index: int = 0
    meta: dict = field(default_factory=dict, repr=False, compare=False)


def cbf_value(ego, obstacle, alpha: float, literal: bool = False) -> float:
    """``dx**2 + dy**2 - alpha**2``; ``literal`` uses ``dx**2 - dy**2 - alpha**2`` instead."""
    dx = ego[0] - obstacle[0]
    dy = ego[1] - obstacle[1]
    if literal:
        return dx * dx - dy * dy - alpha * alpha
    return dx * dx + dy * dy - alpha * alpha


def obstacle_point(world: TrackWorld, env: EnvState, alpha: float = 0.42,
                   literal: bool = False) -> tuple[float, float]:
    """Opponent center or nearest wall point, whichever gives the smaller barrier value.

    Ties go to the opponent.
    """
    ego = (env.ego.x, env.ego.y)
    opp = (env.opp.x, env.opp.y)
    wall = world.grid.nearest_occupied(env.ego.x, env.ego.y)[:2]
    if cbf_value(ego, wall, alpha, literal) < cbf_value(ego, opp, alpha, literal):
        return wall
    return opp


def barrier(world: TrackWorld, env: EnvState, cfg: SafetyConfig) -> float:
    p = obstacle_point(world, env, cfg.alpha, cfg.literal_eq3)
    return cbf_value((env.ego.x, env.ego.y), p, cfg.alpha, cfg.literal_eq3)


def safety_score(h_next: float, h_curr: float, gamma: float) -> float:
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    return h_next - (1.0 - gamma) * h_curr


def first_unsafe(sigmas) -> int | None:
    for t, s in enumerate(sigmas):
        if s < 0:
            return t
    return None


def data_filter(segment: list[Demonstration], cfg: SafetyConfig) -> tuple[list[Demonstration], bool]:
    """Cut the segment at its first negative score, dropping the ``beta`` steps before it.

    Returns the retained prefix and whether the rollout must terminate.
    """
    t = first_unsafe(d.sigma for d in segment)
    if t is None:
        return list(segment), False
    return list(segment[:max(0, t - cfg.beta)]), True


def random_truncate(segment: list, target_count: int, seed) -> list:
    """Uniform random subset of size ``target_count``, original order kept."""
    if target_count > len(segment):
        raise ValueError(f"cannot keep {target_count} of {len(segment)} demonstrations")
    if target_count < 0:
        raise ValueError("target_count must be >= 0")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(segment), size=target_count, replace=False))
    return [segment[i] for i in keep]


def removal_ratio(all_collected: int, kept: int) -> float:
    if all_collected <= 0:
        raise ValueError("no demonstrations collected")
    return 1.0 - kept / all_collected
