"""Named experiments, trial bookkeeping, aggregation and plot-data export.

Every recipe writes ``<out>/<recipe>/trial_<k>/<series>/`` directories.  A
series directory that contains a ``DONE`` marker is never recomputed, so an
interrupted recipe resumes where it stopped.  Aggregates are always rebuilt
from the files on disk.
"""

from __future__ import annotations

import csv
import json
import math
import shutil
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .config import Config, apply_overrides, dump_config
from .experts import make_experts
from .orchestrator import (RunResult, eval_seeds, evaluate_policy, provenance_header,
                           run_training, write_run)
from .trackworld import load_shipped

RECIPES = ("pu_sweep", "filter_vs_random", "mega_vs_hg", "beta_sweep", "expert_vs_novice")
PU_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
BETA_GRID = tuple(range(0, 101, 10))
SERIES_LABELS = {"MEGA": "MEGA", "HG_FILTER": "HG+filter", "HG_PLAIN": "HG",
                 "HG_RANDOM_TRUNC": "HG+random"}


@dataclass(frozen=True)
class ExperimentRecipe:
    name: str
    trials: int = 1
    overrides: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.name not in RECIPES:
            raise ValueError(f"unknown recipe {self.name!r}; choose from {', '.join(RECIPES)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


# --- statistics ----------------------------------------------------------

def summarize(values) -> dict:
    """Mean, sample std and two-sided 95% t-interval of ``values``."""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("no values to summarize")
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if n > 1 else 0.0
    half = float(stats.t.ppf(0.975, n - 1) * std / math.sqrt(n)) if n > 1 else 0.0
    return {"n": n, "mean": mean, "std": std, "ci_low": mean - half, "ci_high": mean + half}


# --- series bookkeeping --------------------------------------------------

def _series_dir(root: Path, trial: int, series: str) -> Path:
    return root / f"trial_{trial}" / series


def _is_done(d: Path) -> bool:
    return (d / "DONE").exists()


def _finish(d: Path, result: RunResult | None = None, extra: dict | None = None) -> None:
    if result is not None:
        write_run(result, d)
    d.mkdir(parents=True, exist_ok=True)
    if extra is not None:
        (d / "summary.json").write_text(json.dumps(extra, indent=1, sort_keys=True) + "\n")
    (d / "DONE").write_text("ok\n")


def read_metrics(d: Path) -> list[dict]:
    with open(d / "metrics.csv") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def read_evals(d: Path) -> list[dict]:
    return [json.loads(p.read_text()) for p in sorted(d.glob("eval_*.json"))]


def removal_stats(d: Path) -> tuple[int, int]:
    rows = read_metrics(d)
    return sum(int(r["collected"]) for r in rows), sum(int(r["removed"]) for r in rows)


def _run_series(root: Path, trial: int, series: str, cfg: Config, world, **kw) -> Path:
    d = _series_dir(root, trial, series)
    if not _is_done(d):
        if d.exists():
            shutil.rmtree(d)
        _finish(d, run_training(cfg, world, **kw))
    return d


def _expert_series(root: Path, trial: int, cfg: Config, world) -> Path:
    """Every expert of the family driving the evaluation seeds alone."""
    d = _series_dir(root, trial, f"{world.name}_EXPERTS")
    if _is_done(d):
        return d
    n = cfg.run.eval_rollouts
    seeds = eval_seeds(cfg.run.seed, n)
    per, points = {}, []
    for spec in make_experts(cfg):
        ev = evaluate_policy(None, world, n, seeds, cfg, expert=spec)
        per[str(spec.expert_id)] = {k: ev[k] for k in ("overtake_pct", "collision_pct", "timeout_pct")}
        points += [(f"expert_{spec.expert_id}", x, y, s) for x, y, s in ev["collision_points"]]
    pooled = {k: float(np.mean([p[k] for p in per.values()]))
              for k in ("overtake_pct", "collision_pct", "timeout_pct")}
    d.mkdir(parents=True, exist_ok=True)
    _write_points(d / "collision_points.csv", points, provenance_header(cfg, series="EXPERTS"))
    _finish(d, extra={"pooled": pooled, "per_expert": per})
    return d


def _write_points(path: Path, points, header: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_label", "x_m", "y_m", "seed"])
        w.writerows(points)


def _trial_cfg(cfg: Config, trial: int) -> Config:
    return replace(cfg, run=replace(cfg.run, seed=cfg.run.seed + trial))


def _with(cfg: Config, **items) -> Config:
    return apply_overrides(cfg, {k.replace("__", "."): str(v) for k, v in items.items()})


# --- recipes -------------------------------------------------------------

def run_recipe(name: str, cfg: Config, out: str | Path, trials: int = 1,
               maps: tuple[str, ...] | None = None, log=print) -> Path:
    """Run (or resume) every trial of recipe ``name`` and write its aggregates."""
    recipe = ExperimentRecipe(name, trials)
    root = Path(out) / recipe.name
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.txt").write_text(dump_config(cfg))
    maps = maps or (cfg.run.map,)
    fn = {"pu_sweep": _pu_sweep, "filter_vs_random": _filter_vs_random,
          "mega_vs_hg": _mega_vs_hg, "beta_sweep": _beta_sweep,
          "expert_vs_novice": _expert_vs_novice}[name]
    for trial in range(trials):
        log(f"{name}: trial {trial + 1}/{trials}")
        tcfg = _trial_cfg(cfg, trial)
        for map_name in maps:
            fn(root, trial, _with(tcfg, run__map=map_name), load_shipped(map_name))
    aggregate(name, root, cfg, trials, maps)
    return root


def _single(cfg: Config, mode: str, **extra) -> Config:
    return _with(cfg, run__mode=mode, experts__count=1, run__hg_expert=1, **extra)


def _filter_pair(root, trial, cfg, world, tag):
    d_f = _run_series(root, trial, f"{tag}HG_FILTER", _single(cfg, "HG_FILTER"), world)
    targets = [int(r["dataset_size"]) for r in read_metrics(d_f)]
    d_r = _run_series(root, trial, f"{tag}HG_RANDOM_TRUNC", _single(cfg, "HG_RANDOM_TRUNC"),
                      world, paired_targets=targets)
    return d_f, d_r


def _pu_sweep(root, trial, cfg, world):
    for pu in PU_GRID:
        _filter_pair(root, trial, _with(cfg, experts__pu=pu), world, f"{world.name}_pu{pu}_")


def _filter_vs_random(root, trial, cfg, world):
    _filter_pair(root, trial, cfg, world, f"{world.name}_")


def _mega_vs_hg(root, trial, cfg, world):
    _run_series(root, trial, f"{world.name}_MEGA", _with(cfg, run__mode="MEGA"), world)
    for mode in ("HG_FILTER", "HG_PLAIN"):
        _run_series(root, trial, f"{world.name}_{mode}", _with(cfg, run__mode=mode), world)


def _beta_sweep(root, trial, cfg, world):
    for beta in BETA_GRID:
        _run_series(root, trial, f"{world.name}_beta{beta}_HG_FILTER",
                    _single(cfg, "HG_FILTER", safety__beta=beta), world)


def _expert_vs_novice(root, trial, cfg, world):
    _run_series(root, trial, f"{world.name}_MEGA", _with(cfg, run__mode="MEGA"), world)
    _expert_series(root, trial, cfg, world)


# --- aggregation ---------------------------------------------------------

def _final(d: Path) -> dict:
    evals = read_evals(d)
    if not evals:
        raise FileNotFoundError(f"{d}: no evaluation results")
    return evals[-1]


def _write_rows(path: Path, header: str, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _stat_cols(prefix: str, values) -> list:
    s = summarize(values)
    return [s["mean"], s["std"], s["ci_low"], s["ci_high"]]


def _stat_names(prefix: str) -> list[str]:
    return [f"{prefix}_mean", f"{prefix}_std", f"{prefix}_ci_low", f"{prefix}_ci_high"]


def aggregate(name: str, root: Path, cfg: Config, trials: int, maps) -> Path:
    """Rebuild ``<root>/<name>.csv`` (mean, std and 95% CI across trials)."""
    header = provenance_header(cfg, recipe=name, trials=trials)
    out = root / f"{name}.csv"
    tdirs = [root / f"trial_{t}" for t in range(trials)]
    rows = []
    if name in ("pu_sweep", "beta_sweep"):
        grid = PU_GRID if name == "pu_sweep" else BETA_GRID
        modes = ("HG_FILTER", "HG_RANDOM_TRUNC") if name == "pu_sweep" else ("HG_FILTER",)
        key = "pu" if name == "pu_sweep" else "beta"
        cols = ["map", key, "series"] + _stat_names("overtake_pct") + _stat_names("collision_pct") \
            + _stat_names("r_beta")
        for m in maps:
            for g in grid:
                for mode in modes:
                    tag = f"{m}_pu{g}_{mode}" if name == "pu_sweep" else f"{m}_beta{g}_{mode}"
                    finals = [_final(t / tag) for t in tdirs]
                    ratios = []
                    for t in tdirs:
                        col, rem = removal_stats(t / tag)
                        ratios.append(rem / col if col else 0.0)
                    rows.append([m, g, SERIES_LABELS[mode]]
                                + _stat_cols("o", [f["overtake_pct"] for f in finals])
                                + _stat_cols("c", [f["collision_pct"] for f in finals])
                                + _stat_cols("r", ratios))
    elif name in ("filter_vs_random", "mega_vs_hg", "expert_vs_novice"):
        modes = {"filter_vs_random": ("HG_FILTER", "HG_RANDOM_TRUNC"),
                 "mega_vs_hg": ("MEGA", "HG_FILTER", "HG_PLAIN"),
                 "expert_vs_novice": ("MEGA",)}[name]
        cols = ["map", "rollout", "series"] + _stat_names("overtake_pct") + _stat_names("collision_pct")
        for m in maps:
            for mode in modes:
                per_trial = [read_evals(t / f"{m}_{mode}") for t in tdirs]
                for k, ev in enumerate(per_trial[0]):
                    rows.append([m, ev["rollout"], SERIES_LABELS[mode]]
                                + _stat_cols("o", [p[k]["overtake_pct"] for p in per_trial])
                                + _stat_cols("c", [p[k]["collision_pct"] for p in per_trial]))
            if name == "expert_vs_novice":
                pooled = [json.loads((t / f"{m}_EXPERTS" / "summary.json").read_text())["pooled"]
                          for t in tdirs]
                rows.append([m, "", "experts"]
                            + _stat_cols("o", [p["overtake_pct"] for p in pooled])
                            + _stat_cols("c", [p["collision_pct"] for p in pooled]))
    _write_rows(out, header, cols, rows)
    return out


# --- plot export ---------------------------------------------------------

PLOT_COLUMNS = ("x", "mean", "ci_low", "ci_high", "series")


def export_plot_data(results: str | Path, dest: str | Path | None = None) -> list[Path]:
    """Tidy plot CSVs (x, mean, ci_low, ci_high, series) from recipe aggregates.

    Files are staged in a temporary directory and only moved into place once
    every figure family has been written, so a failure leaves nothing behind.
    """
    results = Path(results)
    dest = Path(dest) if dest is not None else results / "plots"
    found = sorted(results.glob("*/*.csv")) if results.exists() else []
    found = [p for p in found if p.stem in RECIPES and p.parent.name == p.stem]
    if not found:
        raise FileNotFoundError(f"no recipe results under {results}")
    staged: dict[str, list] = {}
    for path in found:
        with open(path) as fh:
            header = fh.readline().rstrip("\n")
            rows = list(csv.DictReader(fh))
        name = path.stem
        xkey = {"pu_sweep": "pu", "beta_sweep": "beta"}.get(name, "rollout")
        for metric in ("overtake_pct", "collision_pct", "r_beta"):
            if rows and f"{metric}_mean" not in rows[0]:
                continue
            fam = f"{name}_{metric}"
            out_rows = staged.setdefault(fam, [header])
            for r in rows:
                if r[xkey] == "":
                    continue
                out_rows.append([r[xkey], r[f"{metric}_mean"], r[f"{metric}_ci_low"],
                                 r[f"{metric}_ci_high"], f"{r['series']}@{r['map']}"])
        if name == "expert_vs_novice":
            pts = staged.setdefault("collision_points", ["", ])
            pts[0] = header
            for cp in sorted(path.parent.glob("trial_*/*/collision_points.csv")):
                series = cp.parent.name
                with open(cp) as fh:
                    fh.readline()
                    for r in csv.DictReader(fh):
                        label = r.get("agent_label") or "novice_" + series.split("_", 1)[-1]
                        pts.append((r["x_m"], r["y_m"], label))
    if not staged:
        raise FileNotFoundError(f"no plottable rows under {results}")
    tmp = Path(tempfile.mkdtemp(prefix="plots_", dir=results))
    written = []
    try:
        for fam, rows in staged.items():
            cols = ("x_m", "y_m", "agent_label") if fam == "collision_points" else PLOT_COLUMNS
            with open(tmp / f"{fam}.csv", "w", newline="") as fh:
                fh.write(rows[0] + "\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                w.writerows(rows[1:])
        dest.mkdir(parents=True, exist_ok=True)
        for p in sorted(tmp.iterdir()):
            target = dest / p.name
            p.replace(target)
            written.append(target)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return written
