"""Command-line entry point: ``megadagger {train,eval,recipe,inspect,export}``.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import MODES, ConfigError, __version__, dump_config, load_config
from .dataset import Dataset
from .orchestrator import eval_seeds, evaluate_policy, provenance_header, run_training, write_run
from .policy import load_policy
from .recipes import RECIPES, export_plot_data, read_metrics, run_recipe
from .trackworld import SHIPPED_MAPS, load_shipped

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this tool reserves 2 for config errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="megadagger", description="Gated imitation learning for head-to-head racing.")
    p.add_argument("--version", action="version", version=f"megadagger {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, rollouts_help="training rollouts"):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int, help="top-level seed")
        sp.add_argument("--map", choices=SHIPPED_MAPS, help="shipped track")
        sp.add_argument("--rollouts", type=int, help=rollouts_help)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")

    tr = sub.add_parser("train", help="run one training run")
    common(tr)
    tr.add_argument("--mode", choices=MODES)
    tr.add_argument("--out", required=True, help="output directory")

    ev = sub.add_parser("eval", help="evaluate a policy checkpoint")
    common(ev, "evaluation rollouts")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out", help="write the result JSON here")

    rc = sub.add_parser("recipe", help="run a named experiment")
    rc.add_argument("name", choices=RECIPES)
    common(rc)
    rc.add_argument("--trials", type=int, default=1)
    rc.add_argument("--mode", choices=MODES)
    rc.add_argument("--out", default="results")
    rc.add_argument("--all-maps", action="store_true", help="repeat on every shipped map")

    ins = sub.add_parser("inspect", help="dataset or run statistics")
    ins.add_argument("path", help="dataset .npz file or run directory")
    ins.add_argument("--bins", type=int, default=10)

    ex = sub.add_parser("export", help="plot-ready CSVs from recipe results")
    ex.add_argument("--out", default="results", help="results directory")
    ex.add_argument("--dest", help="destination directory (default <out>/plots)")
    return p


def _overrides(args) -> dict[str, str]:
    items: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        k, v = item.split("=", 1)
        items[k.strip()] = v.strip()
    for flag, key in (("seed", "run.seed"), ("map", "run.map"), ("mode", "run.mode")):
        value = getattr(args, flag, None)
        if value is not None:
            items[key] = str(value)
    return items


def _cmd_train(args) -> int:
    items = _overrides(args)
    if args.rollouts is not None:
        items["run.rollouts"] = str(args.rollouts)
    cfg = load_config(args.config, items)
    result = run_training(cfg, load_shipped(cfg.run.map))
    write_run(result, args.out)
    result.dataset.save(Path(args.out) / "dataset.npz")
    (Path(args.out) / "config.txt").write_text(dump_config(cfg))
    for ev in result.evaluations:
        print(f"rollout {ev['rollout']}: overtake {ev['overtake_pct']:.3f} "
              f"collision {ev['collision_pct']:.3f} timeout {ev['timeout_pct']:.3f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    items = _overrides(args)
    cfg = load_config(args.config, items)
    policy = load_policy(args.checkpoint)
    n = args.rollouts or cfg.run.eval_rollouts
    ev = evaluate_policy(policy, load_shipped(cfg.run.map), n, eval_seeds(cfg.run.seed, n), cfg)
    body = {k: ev[k] for k in ("overtake_pct", "collision_pct", "timeout_pct")}
    body["header"] = provenance_header(cfg, checkpoint=Path(args.checkpoint).name)
    text = json.dumps(body, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def _cmd_recipe(args) -> int:
    items = _overrides(args)
    if args.rollouts is not None:
        items["run.rollouts"] = str(args.rollouts)
        items.setdefault("run.eval_every", str(min(args.rollouts, 100)))
    if args.trials < 1:
        raise ConfigError("--trials", "must be >= 1")
    cfg = load_config(args.config, items)
    maps = SHIPPED_MAPS if args.all_maps else (cfg.run.map,)
    root = run_recipe(args.name, cfg, args.out, args.trials, maps,
                      log=lambda msg: print(msg, file=sys.stderr))
    print(root / f"{args.name}.csv")
    return EXIT_OK


def _histogram(values: np.ndarray, bins: int) -> list[str]:
    counts, edges = np.histogram(values, bins=bins)
    return [f"  [{lo:10.4f}, {hi:10.4f})  {c}" for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def _cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        rows = read_metrics(path)
        collected = sum(int(r["collected"]) for r in rows)
        removed = sum(int(r["removed"]) for r in rows)
        replaced = sum(int(r["replaced"]) for r in rows)
        print(f"rollouts {len(rows)}  final |D| {rows[-1]['dataset_size'] if rows else 0}")
        print(f"collected {collected}  removed {removed}  replaced {replaced}")
        if collected:
            print(f"removal ratio {removed / collected:.4f}")
        outcomes: dict[str, int] = {}
        for r in rows:
            outcomes[r["outcome"]] = outcomes.get(r["outcome"], 0) + 1
        print("outcomes " + " ".join(f"{k}={v}" for k, v in sorted(outcomes.items())))
        ds_path = path / "dataset.npz"
        if not ds_path.exists():
            return EXIT_OK
        path = ds_path
    if not path.exists():
        raise FileNotFoundError(f"not found: {path}")
    ds = Dataset.load(path)
    print(f"records {len(ds)}")
    if len(ds):
        print("sigma histogram:")
        print("\n".join(_histogram(ds.sigma, args.bins)))
        ids, counts = np.unique(ds.expert_id, return_counts=True)
        print("records per expert " + " ".join(f"{i}:{c}" for i, c in zip(ids, counts)))
    return EXIT_OK


def _cmd_export(args) -> int:
    for p in export_plot_data(args.out, args.dest):
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help / --version exit 0, usage errors exit 1
        return int(exc.code or 0)
    handler = {"train": _cmd_train, "eval": _cmd_eval, "recipe": _cmd_recipe,
               "inspect": _cmd_inspect, "export": _cmd_export}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
