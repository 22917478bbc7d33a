#!/usr/bin/env python3
"""Exploration-coverage experiment: single agent in a maze, prints the
coverage curve each simulated minute."""

import argparse
import time
from pathlib import Path

from subterra.scenario import load_scenario
from subterra.sim import Simulation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenario", default=str(
        Path(__file__).resolve().parents[1]
        / "scenarios" / "maze_coverage.yaml"))
    ap.add_argument("--minutes", type=int, default=20)
    args = ap.parse_args()

    sim = Simulation(load_scenario(args.scenario))
    t0 = time.time()
    for minute in range(args.minutes):
        for _ in range(int(60.0 / sim.scenario.timing.dt)):
            sim.step()
        a = sim.agents[0]
        print(f"min {minute + 1:2d}: coverage {sim.coverage():.3f}  "
              f"distance {a.robot.distance_traveled:6.1f} m  "
              f"collisions {sim._collisions}  "
              f"wall {time.time() - t0:5.0f} s", flush=True)
    sim.finalize()
    print(sim.metrics.summary)


if __name__ == "__main__":
    main()
