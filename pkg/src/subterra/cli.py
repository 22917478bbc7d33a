"""Command line: run a scenario headless, report metrics, or serve the
live supervisor bridge."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .metrics import replay_metrics, summarize
from .scenario import ScenarioError, load_scenario
from .sim import Simulation


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        scenario.seed = args.seed
    duration = args.duration if args.duration is not None \
        else scenario.timing.duration
    sim = Simulation(scenario)
    try:
        sim.run(duration)
    except Exception as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return 1
    out = Path(args.out)
    sim.metrics.write(out)
    (out / "final_map.vxm").write_bytes(
        _merged_map_snapshot(sim))
    print(json.dumps(sim.metrics.summary, indent=2, sort_keys=True))
    return 0


def _merged_map_snapshot(sim: Simulation) -> bytes:
    return sim.base.grid.snapshot_bytes() if sim.base.grid.layers else \
        sim.agents[0].grid.snapshot_bytes()


def cmd_report(args) -> int:
    events = Path(args.indir) / "events.jsonl"
    if not events.exists():
        print(f"no events.jsonl in {args.indir}", file=sys.stderr)
        return 2
    metrics = replay_metrics(events)
    if args.mode == "summary":
        print(json.dumps(summarize(metrics), indent=2, sort_keys=True))
    elif args.mode == "csv":
        sys.stdout.write(metrics.to_csv())
    elif args.mode == "plot-data":
        out = Path(args.indir) / "plot_data"
        out.mkdir(exist_ok=True)
        series = ["coverage", "score", "bytes_diff", "bytes_status"]
        for col in series:
            with open(out / f"{col}.dat", "w") as f:
                for row in metrics.rows:
                    f.write(f"{row['time_s']} {row.get(col, 0)}\n")
        print(f"wrote {len(series)} series to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .bridge import make_app

    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    app = make_app(scenario, speedup=args.speedup,
                   autostart=not args.paused)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subterra")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a scenario headless")
    pr.add_argument("--scenario", required=True)
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--duration", type=float, default=None)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_run)

    pp = sub.add_parser("report", help="summarize recorded metrics")
    pp.add_argument("--in", dest="indir", required=True)
    pp.add_argument("--mode", choices=["summary", "csv", "plot-data"],
                    default="summary")
    pp.set_defaults(func=cmd_report)

    ps = sub.add_parser("serve", help="live sim + supervisor bridge")
    ps.add_argument("--scenario", required=True)
    ps.add_argument("--port", type=int, default=8750)
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--speedup", type=float, default=4.0)
    ps.add_argument("--paused", action="store_true",
                    help="advance only via ws step messages (tests)")
    ps.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
