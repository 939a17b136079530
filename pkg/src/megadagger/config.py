"""Configuration dataclasses and the plain-text ``key=value`` config format.

Every tunable default lives here as a named key of the form
``section.field``.  Per-expert overrides use ``expert.<id>.<field>``.
Precedence when building an effective config is flag > file > default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

__version__ = "0.1.0"

MODES = ("MEGA", "HG_FILTER", "HG_PLAIN", "HG_RANDOM_TRUNC")


class ConfigError(ValueError):
    """Raised for malformed or invalid configuration; carries the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class LidarConfig:
    n_beams: int = 1080
    fov: float = 1.5 * math.pi
    max_range: float = 10.0


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 0.33
    max_steer: float = 0.41
    max_speed: float = 8.0
    steer_rate: float = 3.2
    accel: float = 9.0
    length: float = 0.5
    width: float = 0.3


@dataclass(frozen=True)
class SimConfig:
    physics_dt: float = 0.01
    control_substeps: int = 2
    gap_start: float = 3.0
    overtake_margin: float = 1.0
    max_steps: int = 5000
    opp_speed_scale: float = 0.8

    @property
    def control_dt(self) -> float:
        return self.physics_dt * self.control_substeps


@dataclass(frozen=True)
class GateConfig:
    d_take: float = 0.9
    d_release: float = 1.5
    n_safe: int = 25


@dataclass(frozen=True)
class SafetyConfig:
    alpha: float = 0.42
    gamma: float = 0.2
    beta: int = 70
    literal_eq3: bool = False


@dataclass(frozen=True)
class ConflictConfig:
    epsilon: float = 0.99
    w_sigma: float = 1.0
    w_speed: float = 1.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    warm_start: bool = False


@dataclass(frozen=True)
class ExpertDefaults:
    """Template from which the expert family is generated."""

    count: int = 5
    pu: float = 0.5
    seed: int = 1
    lookahead: float = 1.2
    switch_trigger: float = 5.0
    jitter: float = 0.1


@dataclass(frozen=True)
class RunSettings:
    mode: str = "MEGA"
    rollouts: int = 1000
    experts_per_iteration: int = 5
    eval_every: int = 100
    eval_rollouts: int = 100
    seed: int = 0
    map: str = "map1"
    hg_expert: int = 1


@dataclass(frozen=True)
class Config:
    lidar: LidarConfig = field(default_factory=LidarConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    sim: SimConfig = field(default_factory=SimConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    conflict: ConflictConfig = field(default_factory=ConflictConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experts: ExpertDefaults = field(default_factory=ExpertDefaults)
    run: RunSettings = field(default_factory=RunSettings)
    # (expert_id, field) -> value, from ``expert.<id>.<field>`` keys
    expert_overrides: tuple[tuple[int, str, Any], ...] = ()

    def validate(self) -> "Config":
        _check(self.lidar.n_beams >= 1, "lidar.n_beams", "must be >= 1")
        _check(self.lidar.max_range > 0, "lidar.max_range", "must be positive")
        for f in fields(self.vehicle):
            _check(getattr(self.vehicle, f.name) > 0, f"vehicle.{f.name}", "must be positive")
        _check(self.sim.physics_dt > 0, "sim.physics_dt", "must be positive")
        _check(self.sim.control_substeps >= 1, "sim.control_substeps", "must be >= 1")
        _check(self.sim.max_steps >= 1, "sim.max_steps", "must be >= 1")
        _check(self.gate.d_take > 0, "gate.d_take", "must be positive")
        _check(self.gate.d_release > self.gate.d_take, "gate.d_release", "must exceed gate.d_take")
        _check(self.gate.n_safe >= 1, "gate.n_safe", "must be >= 1")
        _check(self.safety.alpha > 0, "safety.alpha", "must be positive")
        _check(0 < self.safety.gamma <= 1, "safety.gamma", "must lie in (0, 1]")
        _check(self.safety.beta >= 0, "safety.beta", "must be >= 0")
        _check(-1 <= self.conflict.epsilon <= 1, "conflict.epsilon", "must lie in [-1, 1]")
        _check(self.train.learning_rate > 0, "train.learning_rate", "must be positive")
        _check(self.train.batch_size >= 1, "train.batch_size", "must be >= 1")
        _check(self.train.epochs >= 0, "train.epochs", "must be >= 0")
        _check(0 <= self.experts.pu <= 1, "experts.pu", "must lie in [0, 1]")
        _check(self.experts.count >= 1, "experts.count", "must be >= 1")
        _check(self.experts.lookahead > 0, "experts.lookahead", "must be positive")
        _check(self.run.mode in MODES, "run.mode", f"must be one of {', '.join(MODES)}")
        _check(self.run.rollouts >= 1, "run.rollouts", "must be >= 1")
        _check(self.run.experts_per_iteration >= 1, "run.experts_per_iteration", "must be >= 1")
        _check(self.run.eval_every >= 1, "run.eval_every", "must be >= 1")
        _check(self.run.eval_rollouts >= 1, "run.eval_rollouts", "must be >= 1")
        for eid, name, value in self.expert_overrides:
            key = f"expert.{eid}.{name}"
            _check(1 <= eid <= self.experts.count, key, "expert id out of range")
            if name == "pu":
                _check(0 <= value <= 1, key, "must lie in [0, 1]")
            if name == "lookahead":
                _check(value > 0, key, "must be positive")
        return self


def _check(ok: bool, key: str, message: str) -> None:
    if not ok:
        raise ConfigError(key, message)


_SECTIONS = ("lidar", "vehicle", "sim", "gate", "safety", "conflict", "train", "experts", "run")
_EXPERT_FIELDS = {"pu": float, "seed": int, "lookahead": float, "switch_trigger": float}


def _coerce(key: str, raw: str, kind: Any) -> Any:
    text = raw.strip()
    try:
        if kind is bool or kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int or kind == "int":
            return int(text)
        if kind is float or kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def apply_overrides(cfg: Config, items: dict[str, str]) -> Config:
    """Return ``cfg`` with ``section.field`` string overrides applied."""
    sections = {name: getattr(cfg, name) for name in _SECTIONS}
    changes: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    expert = dict(((eid, name), value) for eid, name, value in cfg.expert_overrides)
    for key, raw in items.items():
        parts = key.strip().split(".")
        if parts[0] == "expert" and len(parts) == 3:
            if not parts[1].isdigit() or parts[2] not in _EXPERT_FIELDS:
                raise ConfigError(key, "unknown key")
            expert[(int(parts[1]), parts[2])] = _coerce(key, raw, _EXPERT_FIELDS[parts[2]])
            continue
        if len(parts) != 2 or parts[0] not in sections:
            raise ConfigError(key, "unknown key")
        section, name = parts
        types = {f.name: f.type for f in fields(sections[section])}
        if name not in types:
            raise ConfigError(key, "unknown key")
        changes[section][name] = _coerce(key, raw, types[name])
    new = {name: replace(sections[name], **changes[name]) for name in _SECTIONS}
    overrides = tuple((eid, name, value) for (eid, name), value in sorted(expert.items()))
    return Config(**new, expert_overrides=overrides).validate()


def parse_config_text(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected key=value")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> Config:
    cfg = Config()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(str(path), "config file not found")
        cfg = apply_overrides(cfg, parse_config_text(path.read_text()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: Config) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name}={_fmt(getattr(obj, f.name))}")
    for eid, name, value in cfg.expert_overrides:
        lines.append(f"expert.{eid}.{name}={_fmt(value)}")
    return "\n".join(lines) + "\n"
