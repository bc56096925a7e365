"""Seed sweep over the bundled scenarios on the nonlinear plant.

Usage: python3 scripts/run_all_scenarios.py [--seeds 10] [--workers 4]
"""
import argparse

import numpy as np

from stealthsim.sim import bundled_scenarios, load_scenario, run_seeds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--scenario", action="append", help="restrict to these scenarios")
    args = ap.parse_args()

    names = args.scenario or bundled_scenarios()
    print(f"{'scenario':18s} {'theory':>7s} {'achieved (median, min..max)':>30s} {'stealthy':>9s}")
    for name in names:
        runs = run_seeds(load_scenario(name), range(args.seeds), workers=args.workers)
        ms = [m for _, m in runs]
        got = np.array([m.achieved_impact for m in ms])
        quiet = sum(m.stealthy for m in ms)
        print(f"{name:18s} {ms[0].theoretical_impact:7.3f} "
              f"{np.median(got):12.3f} ({got.min():6.3f}..{got.max():6.3f}) {quiet:5d}/{len(ms)}")


if __name__ == "__main__":
    main()
