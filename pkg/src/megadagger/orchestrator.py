"""Gated data collection, dataset aggregation and retraining.

A training run alternates between rollouts and retraining.  During a rollout
the novice drives until the gate hands control to an expert; only
expert-controlled steps are recorded.  Depending on the mode the run filters
unsafe demonstrations online, truncates them at random to a matched budget,
resolves label conflicts between near-duplicate scans, or does none of these.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import MODES, Config, __version__
from .conflict import resolve_conflicts
from .dataset import Dataset
from .experts import Expert, ExpertSpec, gate, make_experts, opponent_action
from .policy import Policy, forward, init_policy, save_policy, train, training_loss, downsample
from .racesim import EnvState, Outcome, observe, reset, step_env
from .safetyfilter import Demonstration, barrier, data_filter, safety_score
from .trackworld import TrackWorld
from .vehicle import Action, saturate

log = logging.getLogger(__name__)

FILTER_MODES = ("MEGA", "HG_FILTER", "HG_RANDOM_TRUNC")
EVAL_SEED_BASE = 1_000_000
METRIC_COLUMNS = ("rollout", "expert_id", "outcome", "steps", "collected", "kept",
                  "removed", "replaced", "dataset_size", "train_loss")


def rollout_seed(run_seed: int, j: int) -> int:
    """Environment seed for training rollout ``j`` (shared across modes)."""
    return run_seed * 100_003 + j


def eval_seeds(run_seed: int, n: int) -> list[int]:
    """Evaluation seeds, disjoint from every training seed and reused per checkpoint."""
    return [EVAL_SEED_BASE + run_seed * 10_007 + k for k in range(n)]


@dataclass
class RolloutResult:
    demos: list[Demonstration]  # records that survive filtering
    outcome: Outcome
    steps: int
    collected: int  # expert-controlled steps recorded before any removal
    filtered: bool = False  # rollout ended early on a negative safety score
    removed: list[Demonstration] = field(default_factory=list)
    collision_point: tuple[float, float] | None = None
    expert_steps: int = 0

    @property
    def outcome_label(self) -> str:
        return "Filtered" if self.filtered else self.outcome.value


def _novice_action(policy: Policy | None, scan: np.ndarray, cfg: Config) -> Action:
    if policy is None:
        return Action(0.0, 0.0)
    return forward(policy, downsample(scan, cfg.lidar.max_range))


def run_rollout(world: TrackWorld, env_seed: int, novice: Policy | None, expert: Expert,
                cfg: Config, mode: str = "MEGA", rollout_id: int = 0,
                force_expert: bool = False) -> RolloutResult:
    """One gated episode.

    ``force_expert`` hands the expert control for the whole episode (used to
    measure expert performance in the same harness).  In filter modes the first
    negative safety score ends the episode and the current takeover segment is
    cut back by ``beta`` steps.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    use_filter = mode in ("MEGA", "HG_FILTER", "HG_RANDOM_TRUNC")
    # random truncation terminates on the same signal but keeps the segment for later subsampling
    cut_segments = mode in ("MEGA", "HG_FILTER")
    env = reset(world, env_seed, cfg)
    expert_on = force_expert
    if force_expert:
        expert.engage(world, env)
    safe_steps = 0
    kept: list[Demonstration] = []
    removed: list[Demonstration] = []
    segment: list[Demonstration] = []
    collected = 0
    expert_steps = 0
    filtered = False
    max_range = cfg.lidar.max_range

    def close_segment():
        nonlocal segment
        kept.extend(segment)
        segment = []

    while not env.done:
        obs = observe(world, env, "ego", cfg)
        if not force_expert:
            was_on = expert_on
            expert_on, safe_steps = gate(obs, cfg.gate, expert_on, safe_steps)
            if expert_on and not was_on:
                expert.engage(world, env)
            elif was_on and not expert_on:
                close_segment()
        if expert_on:
            a = saturate(expert.act(world, env, cfg), cfg.vehicle)
            h_now = barrier(world, env, cfg.safety)
        else:
            a = _novice_action(novice, obs.ranges, cfg)
        a_opp, lane = opponent_action(world, env, cfg)
        nxt = step_env(world, replace(env, opp_lane=lane), a, a_opp, cfg)
        if expert_on:
            expert_steps += 1
            sigma = safety_score(barrier(world, nxt, cfg.safety), h_now, cfg.safety.gamma)
            segment.append(Demonstration(downsample(obs.ranges, max_range), a, sigma, env.ego.v,
                                         expert.spec.expert_id, rollout_id, env.step_index))
            collected += 1
            if use_filter and sigma < 0:
                if cut_segments:
                    survivors, _ = data_filter(segment, cfg.safety)
                    removed.extend(segment[len(survivors):])
                    segment = survivors
                filtered = True
                env = nxt
                break
        env = nxt
    close_segment()
    point = (env.ego.x, env.ego.y) if env.outcome is Outcome.COLLISION else None
    return RolloutResult(kept, env.outcome, env.step_index, collected, filtered, removed, point,
                         expert_steps)


def evaluate_policy(policy: Policy | None, world: TrackWorld, n: int, seeds=None,
                    cfg: Config = Config(), expert: ExpertSpec | None = None) -> dict:
    """Full-control episodes by the novice (or by ``expert`` if given).

    Returns outcome fractions over ``n`` episodes and the ego position of every
    collision.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seeds = list(seeds) if seeds is not None else list(range(n))
    if len(seeds) < n:
        raise ValueError("fewer seeds than rollouts")
    counts = {o: 0 for o in (Outcome.OVERTAKE, Outcome.COLLISION, Outcome.TIMEOUT)}
    points = []
    for k in range(n):
        seed = seeds[k]
        if expert is not None:
            res = run_rollout(world, seed, None, Expert(expert, seed), cfg, "HG_PLAIN",
                              force_expert=True)
            outcome = res.outcome
            pos = res.collision_point
        else:
            outcome, pos = _drive(policy, world, seed, cfg)
        counts[outcome] += 1
        if outcome is Outcome.COLLISION:
            points.append((pos[0], pos[1], seed))
    return {"overtake_pct": counts[Outcome.OVERTAKE] / n,
            "collision_pct": counts[Outcome.COLLISION] / n,
            "timeout_pct": counts[Outcome.TIMEOUT] / n,
            "collision_points": points}


def _drive(policy: Policy | None, world: TrackWorld, seed: int, cfg: Config):
    env = reset(world, seed, cfg)
    while not env.done:
        obs = observe(world, env, "ego", cfg)
        a = _novice_action(policy, obs.ranges, cfg)
        a_opp, lane = opponent_action(world, env, cfg)
        env = step_env(world, replace(env, opp_lane=lane), a, a_opp, cfg)
    return env.outcome, (env.ego.x, env.ego.y)


# --- training runs -------------------------------------------------------

@dataclass
class RunResult:
    checkpoints: list[tuple[int, Policy]]
    metrics: list[dict]
    dataset: Dataset
    evaluations: list[dict] = field(default_factory=list)
    header: str = ""

    @property
    def kept_trajectory(self) -> list[int]:
        return [m["dataset_size"] for m in self.metrics]

    def metrics_csv(self) -> str:
        return format_metrics(self.metrics, self.header)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_metrics(rows: list[dict], header: str) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def provenance_header(cfg: Config, **extra) -> str:
    parts = [f"# megadagger {__version__}", f"seed={cfg.run.seed}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts)


def select_experts(cfg: Config) -> list[ExpertSpec]:
    """The full family in MEGA mode; the single configured expert otherwise."""
    specs = make_experts(cfg)
    if cfg.run.mode == "MEGA":
        return specs[: cfg.run.experts_per_iteration]
    return [specs[cfg.run.hg_expert - 1]]


def run_training(cfg: Config, world: TrackWorld, experts: list[ExpertSpec] | None = None,
                 paired_targets: list[int] | None = None, evaluate: bool = True,
                 on_checkpoint=None) -> RunResult:
    """Interactive training for ``cfg.run.rollouts`` rollouts.

    Experts are used round-robin and the novice is retrained after every
    ``run.experts_per_iteration`` rollouts (one iteration) in every mode.  In ``HG_RANDOM_TRUNC`` mode ``paired_targets``
    gives the dataset size to reach after each rollout; when omitted it is
    taken from an ``HG_FILTER`` run with the same seeds.
    """
    cfg = cfg.validate()
    mode = cfg.run.mode
    experts = list(experts) if experts is not None else select_experts(cfg)
    if not experts:
        raise ValueError("no experts")
    if mode != "MEGA" and len(experts) != 1:
        raise ValueError(f"{mode} uses exactly one expert, got {len(experts)}")
    if mode == "HG_RANDOM_TRUNC" and paired_targets is None:
        paired = run_training(replace(cfg, run=replace(cfg.run, mode="HG_FILTER")), world,
                              experts, evaluate=False)
        paired_targets = paired.kept_trajectory
    if paired_targets is not None and len(paired_targets) < cfg.run.rollouts:
        raise ValueError("paired_targets shorter than the rollout budget")

    drivers = [Expert(spec, stream_seed=cfg.run.seed) for spec in experts]
    m = len(experts)
    per_iteration = cfg.run.experts_per_iteration
    data = Dataset(capacity=4096)
    reserve = Dataset(capacity=256)
    trunc_rng = np.random.default_rng([cfg.run.seed, 17])
    # the first novice is an untrained random network
    policy = init_policy([cfg.train.seed, cfg.run.seed, 0], max_steer=cfg.vehicle.max_steer,
                         max_speed=cfg.vehicle.max_speed)
    header = provenance_header(cfg, mode=mode, map=world.name)
    result = RunResult([], [], data, header=header)
    seeds_eval = eval_seeds(cfg.run.seed, cfg.run.eval_rollouts)

    for j in range(cfg.run.rollouts):
        driver = drivers[j % m]
        roll = run_rollout(world, rollout_seed(cfg.run.seed, j), policy, driver, cfg, mode, j)
        new = Dataset.from_demos(roll.demos)
        n_removed = len(roll.removed)
        if mode == "HG_RANDOM_TRUNC":
            new, n_removed = _random_truncate(new, reserve, paired_targets[j] - len(data), trunc_rng)
        replaced = 0
        if mode == "MEGA" and len(new) and len(data):
            new, data, replaced = resolve_conflicts(new, data, cfg.conflict.epsilon,
                                                    cfg.conflict.w_sigma, cfg.conflict.w_speed)
        data.merge(new)
        row = {"rollout": j + 1, "expert_id": driver.spec.expert_id, "outcome": roll.outcome_label,
               "steps": roll.steps, "collected": roll.collected, "kept": len(new),
               "removed": n_removed, "replaced": replaced, "dataset_size": len(data),
               "train_loss": None}
        if (j + 1) % per_iteration == 0 or j + 1 == cfg.run.rollouts:
            if len(data) == 0:
                log.warning("rollout %d: empty dataset, skipping training", j + 1)
            else:
                start = policy if cfg.train.warm_start else init_policy(
                    [cfg.train.seed, cfg.run.seed, j + 1], max_steer=cfg.vehicle.max_steer,
                    max_speed=cfg.vehicle.max_speed)
                policy = train(start, data.obs, data.actions, cfg.train,
                               seed=[cfg.train.seed, cfg.run.seed, j + 1])
                row["train_loss"] = round(training_loss(policy, data.obs, data.actions), 12)
        result.metrics.append(row)
        if (j + 1) % cfg.run.eval_every == 0 or j + 1 == cfg.run.rollouts:
            result.checkpoints.append((j + 1, policy))
            if evaluate:
                ev = evaluate_policy(policy, world, cfg.run.eval_rollouts, seeds_eval, cfg)
                ev["rollout"] = j + 1
                result.evaluations.append(ev)
            if on_checkpoint is not None:
                on_checkpoint(j + 1, policy, result)
    return result


def _random_truncate(new: Dataset, reserve: Dataset, need: int,
                     rng: np.random.Generator) -> tuple[Dataset, int]:
    """Keep exactly ``need`` records drawn uniformly from ``new`` plus earlier discards.

    Records not kept go to ``reserve`` so that a later rollout that collected
    fewer records than its target can still reach it.
    """
    pool = Dataset(capacity=max(1, len(new) + len(reserve)))
    pool.merge(reserve)
    pool.merge(new)
    n_pool = len(pool)
    if need > n_pool:
        log.warning("random truncation: target exceeds available records (%d > %d)", need, n_pool)
    need = max(0, min(need, n_pool))
    pick = np.zeros(n_pool, bool)
    pick[rng.choice(n_pool, size=need, replace=False)] = True
    idx_keep = np.flatnonzero(pick)
    idx_rest = np.flatnonzero(~pick)
    kept = _subset(pool, idx_keep)
    rest = _subset(pool, idx_rest)
    reserve.__init__(capacity=max(1, len(rest)))
    reserve.merge(rest)
    removed = max(0, len(new) - need)
    return kept, removed


def _subset(ds: Dataset, idx: np.ndarray) -> Dataset:
    out = Dataset(capacity=max(1, len(idx)))
    if len(idx):
        out.append_arrays(ds.obs[idx], ds.actions[idx], ds.sigma[idx], ds.v[idx],
                          ds.expert_id[idx], ds.rollout_id[idx], ds.step_index[idx])
    return out


def expert_baseline(cfg: Config, world: TrackWorld, experts: list[ExpertSpec], n: int) -> dict:
    """Outcome fractions pooled over every expert driving the evaluation seeds alone."""
    seeds = eval_seeds(cfg.run.seed, n)
    tot = {"overtake_pct": 0.0, "collision_pct": 0.0, "timeout_pct": 0.0}
    for spec in experts:
        ev = evaluate_policy(None, world, n, seeds, cfg, expert=spec)
        for k in tot:
            tot[k] += ev[k] / len(experts)
    return tot


def write_run(result: RunResult, out: str | Path) -> None:
    """Metrics CSV, per-checkpoint JSON results, checkpoints and collision points."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.metrics_csv())
    for rollout, pol in result.checkpoints:
        save_policy(pol, out / f"policy_{rollout:05d}.bin")
    rows = []
    for ev in result.evaluations:
        body = {k: ev[k] for k in ("rollout", "overtake_pct", "collision_pct", "timeout_pct")}
        body["header"] = result.header
        (out / f"eval_{ev['rollout']:05d}.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
        rows += [(ev["rollout"], *p) for p in ev["collision_points"]]
    with open(out / "collision_points.csv", "w", newline="") as fh:
        fh.write(result.header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rollout", "x_m", "y_m", "seed"])
        w.writerows(rows)
