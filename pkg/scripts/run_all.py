#!/usr/bin/env python3
"""Run every packaged experiment config in sequence.

Each experiment writes results.csv / meta.json (and plot.svg where
configured) under runs/<name>.  Pass --quick to shrink the Monte Carlo
budgets for a fast smoke pass, or name specific configs to run.

Usage:
    python3 scripts/run_all.py            # full budgets, all experiments
    python3 scripts/run_all.py --quick
    python3 scripts/run_all.py clt pnn_count
"""

import argparse
import subprocess
import sys
import time
from pathlib import Path

CONFIG_DIR = Path(__file__).resolve().parent / "configs"

# override strings applied in --quick mode, per config stem
QUICK = {
    "clt": ["experiment.reps=300", "grid.n=1e3 1e4"],
    "pnn_count": ["experiment.reps=100", "grid.n=1e3 1e4 1e5"],
    "bias": ["experiment.reps=300", "grid.n=1e3 1e4"],
    "tail_calibration": ["params.cases=8", "params.draws=4000"],
    "concentration": ["experiment.reps=400"],
    "lower_bound_fit": ["params.outer=500", "params.inner=500", "grid.k=4 8 16"],
    "assumption_audit": ["params.instances=60"],
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*",
                        help="config stems to run (default: all)")
    parser.add_argument("--quick", action="store_true",
                        help="shrink Monte Carlo budgets for a smoke pass")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes per experiment")
    args = parser.parse_args()

    configs = sorted(CONFIG_DIR.glob("*.cfg"))
    if args.names:
        wanted = set(args.names)
        configs = [c for c in configs if c.stem in wanted]
        missing = wanted - {c.stem for c in configs}
        if missing:
            parser.error(f"unknown config(s): {sorted(missing)}")
    if not configs:
        parser.error(f"no configs found under {CONFIG_DIR}")

    failures = []
    for cfg in configs:
        cmd = [sys.executable, "-m", "pnnforest.cli", "run", str(cfg)]
        if args.quick:
            for override in QUICK.get(cfg.stem, []):
                cmd += ["--set", override]
        if args.workers is not None:
            cmd += ["--workers", str(args.workers)]
        print(f"=== {cfg.stem} ===", flush=True)
        start = time.time()
        status = subprocess.run(cmd).returncode
        print(f"=== {cfg.stem}: exit {status} in {time.time() - start:.1f}s ===",
              flush=True)
        if status != 0:
            failures.append(cfg.stem)

    if failures:
        print(f"failed: {', '.join(failures)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
