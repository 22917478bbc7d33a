#!/usr/bin/env python3
"""Measure diff-map bandwidth against repeated full-map transmission.

Runs the one-hour tunnel scenario and prints the byte totals and the ratio
(diffs vs. full map re-sent every 10 s), plus the transport-level stats.
"""

import argparse
import time
from pathlib import Path

from subterra.scenario import load_scenario
from subterra.sim import Simulation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenario", default=str(
        Path(__file__).resolve().parents[1]
        / "scenarios" / "tunnel_bandwidth.yaml"))
    ap.add_argument("--duration", type=float, default=None)
    args = ap.parse_args()

    scenario = load_scenario(args.scenario)
    duration = args.duration or scenario.timing.duration
    t0 = time.time()
    sim = Simulation(scenario)
    sim.run(duration)
    wall = time.time() - t0

    agent = sim.agents[0]
    diffs = agent.mission.diff_store[agent.id]
    diff_bytes = sum(len(b) for b in diffs.values())
    full_bytes = len(agent.grid.snapshot_bytes())
    n_tx = int(duration // scenario.mission.diff_cadence)
    ratio = diff_bytes / max(1, full_bytes * n_tx)
    print(f"diff transmissions: {len(diffs)}")
    print(f"diff bytes total:   {diff_bytes / 1e6:.3f} MB")
    print(f"full map snapshot:  {full_bytes / 1e6:.3f} MB "
          f"(x{n_tx} resends = {full_bytes * n_tx / 1e6:.1f} MB)")
    print(f"bandwidth ratio:    {ratio:.5f}  (paper reports ~= 1/100)")
    print(f"coverage:           {sim.coverage():.3f}")
    print(f"wall time:          {wall:.0f} s")


if __name__ == "__main__":
    main()
