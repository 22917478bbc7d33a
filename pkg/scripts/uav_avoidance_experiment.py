#!/usr/bin/env python3
"""Single-obstacle reactive avoidance sweeps for the aerial controller:
three goal offsets, ten seeds each; prints reach rate and clearances."""

import argparse

import numpy as np

from subterra.sim import run_uav_avoidance


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    for offset in (2.0, 5.0, 4.0):
        results = [run_uav_avoidance(offset, s) for s in range(args.seeds)]
        reached = sum(r["reached"] for r in results)
        clear = min(r["min_clearance"] for r in results)
        print(f"goal {offset:.0f} m behind obstacle: "
              f"{reached}/{args.seeds} reached, "
              f"min clearance {clear:.2f} m, "
              f"mean path {np.mean([len(r['trajectory']) for r in results]) * 0.1:.1f} s")


if __name__ == "__main__":
    main()
