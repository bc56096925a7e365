"""Worst-case Stage III impact for every bundled scenario.

Usage: python3 scripts/reproduce_impacts.py [--horizon 1800]
"""
import argparse

import numpy as np

from stealthsim.attack import build_Txa, solve_worst_case
from stealthsim.sim import attacker_knowledge, build_setup, bundled_scenarios, load_scenario, operator_stats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=1800)
    args = ap.parse_args()

    print(f"{'scenario':18s} {'rho(Ac)':>8s} {'J_D':>8s} {'impact [K]':>11s}  target")
    for name in bundled_scenarios():
        cfg = load_scenario(name)
        setup = build_setup(cfg)
        _, stats = operator_stats(cfg, setup)
        know = attacker_knowledge(cfg, setup, stats)
        p = solve_worst_case(build_Txa(know, args.horizon), know.detector)
        rho = np.max(np.abs(np.linalg.eigvals(setup.controller.Ac)))
        sign = "+" if p.target_sign > 0 else "-"
        print(f"{name:18s} {rho:8.4f} {know.detector.J_D:8.4f} {p.theoretical_impact:11.3f}  "
              f"{sign}x[{p.target_index}]")


if __name__ == "__main__":
    main()
