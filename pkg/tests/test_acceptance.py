"""End-to-end acceptance checks.

Each test appends one PASS/FAIL line to ``RESULTS``; ``conftest.py`` prints
them in the terminal summary.  Criteria 5 to 9 run full training experiments
and take a while (see the README for typical runtimes).
"""

import math
import time

import numpy as np
import pytest

from megadagger.cli import main as cli_main
from megadagger.config import Config, SafetyConfig, apply_overrides
from megadagger.conflict import resolve_conflicts
from megadagger.orchestrator import expert_baseline, run_training
from megadagger.policy import encode_targets, gradient_check, init_policy
from megadagger.recipes import read_evals, read_metrics, run_recipe
from megadagger.experts import make_experts
from megadagger.safetyfilter import Demonstration, data_filter
from megadagger.trackworld import load_shipped, raycast, raymarch
from megadagger.vehicle import Action

from oracles import conflict_oracle, filter_oracle
from test_conflict import random_fixture, to_ds

RESULTS: list[str] = []

def report(n: int, ok: bool, detail: str, started: float) -> None:
    RESULTS.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.time() - started:.0f} s)")


def experiment_cfg(**items) -> Config:
    """Default configuration with ``section__key`` overrides."""
    return apply_overrides(Config(), {k.replace("__", "."): str(v) for k, v in items.items()})


def test_criterion_1_gradient_check():
    t0 = time.time()
    worst = 0.0
    for k in range(20):
        rng = np.random.default_rng(k)
        X = rng.uniform(0.05, 1.0, (32, 108))
        actions = np.column_stack([rng.uniform(-0.41, 0.41, 32), rng.uniform(0.1, 7.9, 32)])
        err = gradient_check(init_policy(1000 + k), X, encode_targets(actions, 0.41, 8.0), seed=k)
        worst = max(worst, err)
    ok = worst < 1e-4
    report(1, ok, f"max relative error {worst:.2e} over 20 pairs", t0)
    assert ok


def random_free_poses(world, n, rng):
    poses = []
    while len(poses) < n:
        s = rng.uniform(0, world.length)
        x, y, h, _ = world.centerline.point_at(s)
        off = rng.uniform(-2.0, 2.0)
        px, py = x - off * math.sin(h), y + off * math.cos(h)
        if world.is_free(px, py):
            poses.append((px, py, rng.uniform(-math.pi, math.pi)))
    return poses


def test_criterion_2_raycast_matches_marching():
    t0 = time.time()
    lid = Config().lidar
    rng = np.random.default_rng(2)
    worst, n = 0.0, 0
    res = []
    for name in ("map1", "map2"):
        w = load_shipped(name)
        res.append(w.grid.resolution)
        for pose in random_free_poses(w, 500, rng):
            fast = raycast(w, pose, lid.n_beams, lid.fov, lid.max_range)
            slow = raymarch(w, pose, lid.n_beams, lid.fov, lid.max_range)
            worst = max(worst, float(np.max(np.abs(fast - slow))) / w.grid.resolution)
            n += 1
    ok = n == 1000 and worst <= 1.0
    report(2, ok, f"{n} poses, max |DDA - march| = {worst:.3f} cells", t0)
    assert ok


def test_criterion_3_filter_semantics():
    t0 = time.time()
    rng = np.random.default_rng(3)
    mismatches = unsafe = 0
    for k in range(200):
        n = int(rng.integers(0, 300))
        sig = rng.normal(0.5, 0.5, n)
        if k % 4 == 0:
            sig = np.abs(sig)
        beta = int(rng.choice([0, 1, 10, 70, 150]))
        seg = [Demonstration(np.ones(108), Action(0, 0), float(s), step_index=i) for i, s in enumerate(sig)]
        kept, stop = data_filter(seg, SafetyConfig(beta=beta))
        idx, ref_stop = filter_oracle(list(sig), beta)
        mismatches += [d.step_index for d in kept] != idx or stop != ref_stop
        unsafe += sum(d.sigma < 0 for d in kept)
    ok = mismatches == 0 and unsafe == 0 and time.time() - t0 < 10
    report(3, ok, f"200 sequences, {mismatches} mismatches, {unsafe} retained sigma<0", t0)
    assert ok


def test_criterion_4_conflict_oracle():
    t0 = time.time()
    rng = np.random.default_rng(4)
    bad = not_idem = groups = 0
    for k in range(50):
        new_rows, data_rows = random_fixture(rng, int(rng.integers(1, 15)), int(rng.integers(1, 10)))
        ref_new, ref_data = conflict_oracle(new_rows, data_rows, 0.99)
        new, data = to_ds(new_rows), to_ds(data_rows)
        _, _, replaced = resolve_conflicts(new, data, 0.99)
        groups += replaced > 0
        bad += [tuple(a) for a in new.actions] != ref_new or [tuple(a) for a in data.actions] != ref_data
        before = new.actions.copy(), data.actions.copy()
        resolve_conflicts(new, data, 0.99)
        not_idem += not (np.array_equal(new.actions, before[0]) and np.array_equal(data.actions, before[1]))
    ok = bad == 0 and not_idem == 0 and time.time() - t0 < 10
    report(4, ok, f"50 fixtures ({groups} with relabels), {bad} oracle mismatches, "
                  f"{not_idem} non-idempotent", t0)
    assert ok


R_BETA_REFERENCE = {0.1: 0.22, 0.5: 0.34, 1.0: 0.82}


def test_criterion_5_removal_ratio_trend():
    t0 = time.time()
    world = load_shipped("map1")
    ratios = {}
    for pu in R_BETA_REFERENCE:
        cfg = experiment_cfg(run__mode="HG_FILTER", experts__count=1, experts__pu=pu,
                             run__rollouts=100, run__eval_every=100)
        res = run_training(cfg, world, evaluate=False)
        collected = sum(m["collected"] for m in res.metrics)
        removed = sum(m["removed"] for m in res.metrics)
        ratios[pu] = removed / max(collected, 1)
    r = [ratios[pu] for pu in R_BETA_REFERENCE]
    increasing = r[0] < r[1] < r[2]
    within = all(abs(ratios[pu] - ref) <= 0.15 for pu, ref in R_BETA_REFERENCE.items())
    ok = increasing and within
    detail = " ".join(f"pu={pu}: {ratios[pu]:.3f} (ref {ref})" for pu, ref in R_BETA_REFERENCE.items())
    report(5, ok, f"{detail}; strictly increasing={increasing}, within 0.15={within}", t0)
    assert increasing, "removal ratio must increase strictly with pu"
    assert within, "removal ratio outside the 0.15 tolerance band"


def _checkpoint_means(run_dir, key, after=0):
    vals = [e[key] for e in read_evals(run_dir) if e["rollout"] > after]
    return float(np.mean(vals))


def test_criterion_6_filter_beats_random_truncation(tmp_path):
    t0 = time.time()
    cfg = experiment_cfg(experts__pu=0.5, run__rollouts=200, run__eval_every=50, run__eval_rollouts=50)
    root = run_recipe("filter_vs_random", cfg, tmp_path, trials=3, log=lambda m: None)
    stats = {}
    for mode in ("HG_FILTER", "HG_RANDOM_TRUNC"):
        dirs = [root / f"trial_{t}" / f"map1_{mode}" for t in range(3)]
        stats[mode] = {k: float(np.mean([_checkpoint_means(d, k) for d in dirs]))
                       for k in ("overtake_pct", "collision_pct")}
    f, r = stats["HG_FILTER"], stats["HG_RANDOM_TRUNC"]
    ok = f["overtake_pct"] > r["overtake_pct"] and f["collision_pct"] < r["collision_pct"]
    report(6, ok, f"overtake filter {f['overtake_pct']:.3f} vs random {r['overtake_pct']:.3f}; "
                  f"collision filter {f['collision_pct']:.3f} vs random {r['collision_pct']:.3f}", t0)
    assert ok


@pytest.fixture(scope="module")
def mega_runs(tmp_path_factory):
    """MEGA, HG_FILTER and HG_PLAIN on both maps, 3 trials of 200 rollouts."""
    t0 = time.time()
    out = tmp_path_factory.mktemp("mega")
    cfg = experiment_cfg(experts__pu=0.5, run__rollouts=200, run__eval_every=50, run__eval_rollouts=50)
    root = run_recipe("mega_vs_hg", cfg, out, trials=3, maps=("map1", "map2"), log=lambda m: None)
    return root, cfg, t0


def test_criterion_7_mega_beats_its_experts(mega_runs):
    root, cfg, t0 = mega_runs
    world = load_shipped("map1")
    novice, experts = [], []
    for t in range(3):
        evals = read_evals(root / f"trial_{t}" / "map1_MEGA")
        novice.append(evals[-1])
        tcfg = apply_overrides(cfg, {"run.seed": str(cfg.run.seed + t)})
        experts.append(expert_baseline(tcfg, world, make_experts(tcfg), cfg.run.eval_rollouts))
    n_col = np.mean([e["collision_pct"] for e in novice])
    n_ovt = np.mean([e["overtake_pct"] for e in novice])
    e_col = np.mean([e["collision_pct"] for e in experts])
    e_ovt = np.mean([e["overtake_pct"] for e in experts])
    ok = n_col < e_col and n_ovt > e_ovt
    report(7, ok, f"MEGA collision {n_col:.3f} vs experts {e_col:.3f}; "
                  f"overtake {n_ovt:.3f} vs experts {e_ovt:.3f}", t0)
    assert ok


def test_criterion_8_mega_vs_hg(mega_runs):
    root, _, t0 = mega_runs
    parts, ok = [], False
    for name in ("map1", "map2"):
        m = np.mean([_checkpoint_means(root / f"trial_{t}" / f"{name}_MEGA", "overtake_pct", 100)
                     for t in range(3)])
        h = np.mean([_checkpoint_means(root / f"trial_{t}" / f"{name}_HG_PLAIN", "overtake_pct", 100)
                     for t in range(3)])
        ok |= m >= h
        parts.append(f"{name}: MEGA {m:.3f} vs HG {h:.3f}")
    report(8, ok, "; ".join(parts), t0)
    assert ok


def test_criterion_9_recipe_is_deterministic(tmp_path):
    t0 = time.time()
    csvs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = cli_main(["recipe", "mega_vs_hg", "--trials", "1", "--rollouts", "100", "--out", str(out)])
        assert code == 0
        files = sorted((out / "mega_vs_hg").rglob("metrics.csv"))
        csvs.append({str(p.relative_to(out)): p.read_bytes() for p in files})
    ok = len(csvs[0]) == 3 and csvs[0] == csvs[1]
    report(9, ok, f"{len(csvs[0])} metrics CSVs byte-identical={csvs[0] == csvs[1]}", t0)
    assert ok
