"""Command line entry point: ``seal run`` and ``seal compare``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, default_scenario, load_scenario
from .metrics import compare_table
from .world import BUILTIN_WORLDS, PoseInsideObstacle, WorldFormatError


def _scenario(arg: str):
    if arg in BUILTIN_WORLDS and not Path(arg).exists():
        return default_scenario(arg)
    return load_scenario(arg)


def cmd_run(args) -> int:
    from .sim import run_simulation

    cfg = _scenario(args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.steps = args.steps
    if args.robots is not None:
        cfg.robots = args.robots
    if args.baseline is not None:
        cfg.mode = "frontier" if args.baseline == "frontier" else "seal"

    def progress(step, pct):
        if args.verbose and step % 100 == 0:
            print(f"step {step:5d}  explored {pct:5.1f}%", file=sys.stderr)

    report = run_simulation(cfg, args.out, progress=progress)
    print(f"{'completed' if report.completed else 'budget reached'} after {report.steps} steps: "
          f"explored {report.explored_pct:.1f}%  SSIM {report.map_ssim:.3f}  "
          f"ALE {report.ale:.3f} m  -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    from .sim import load_metrics

    runs = {}
    for path in args.runs.split(","):
        path = path.strip()
        if path:
            runs[Path(path).name or path] = load_metrics(path)
    if not runs:
        print("no runs given", file=sys.stderr)
        return 2
    print(compare_table(runs))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seal", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a multi-robot exploration run")
    r.add_argument("--scenario", required=True,
                   help="scenario file, or a builtin world name (bookstore, house)")
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--robots", type=int)
    r.add_argument("--baseline", choices=["frontier", "none"])
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="tabulate metrics.json of several runs")
    c.add_argument("--runs", required=True, help="comma-separated run directories")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, WorldFormatError, PoseInsideObstacle, FileNotFoundError) as exc:
        print(f"seal: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
