"""Kinematic bicycle model with rate-limited steering and speed actuators."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import VehicleParams

__all__ = ["VehicleState", "Action", "VehicleParams", "saturate", "step_dynamics", "wrap_angle"]


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float
    v: float = 0.0
    delta: float = 0.0

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


@dataclass(frozen=True)
class Action:
    steering: float
    speed: float


def saturate(a: Action, params: VehicleParams) -> Action:
    steer = min(params.max_steer, max(-params.max_steer, a.steering))
    speed = min(params.max_speed, max(0.0, a.speed))
    if steer == a.steering and speed == a.speed:
        return a
    return Action(steer, speed)


def _approach(current: float, target: float, max_change: float) -> float:
    diff = target - current
    if diff > max_change:
        return current + max_change
    if diff < -max_change:
        return current - max_change
    return target


def step_dynamics(s: VehicleState, a: Action, params: VehicleParams, dt: float) -> VehicleState:
    """One explicit-Euler step of the full state (pose from the current v and delta,
    then the actuators move toward the command)."""
    x = s.x + s.v * math.cos(s.theta) * dt
    y = s.y + s.v * math.sin(s.theta) * dt
    theta = wrap_angle(s.theta + s.v / params.wheelbase * math.tan(s.delta) * dt)
    delta = _approach(s.delta, a.steering, params.steer_rate * dt)
    v = _approach(s.v, a.speed, params.accel * dt)
    v = min(params.max_speed, max(0.0, v))
    return VehicleState(x, y, theta, v, delta)
