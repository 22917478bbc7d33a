"""Run metrics: per-second rows (coverage, bandwidth, score, distance,
planner latency) written as versioned CSV, an event log (JSONL) that can
replay the metrics without re-simulation, and a summary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

CSV_SCHEMA_VERSION = 1
# planner wall-clock latency lives in summary.json/events, not here: the
# CSV must be byte-identical across same-seed runs
FIXED_COLUMNS = ["tick", "time_s", "coverage", "score", "collisions",
                 "bytes_status", "bytes_artifact", "bytes_diff",
                 "bytes_image", "bytes_other", "plans"]


@dataclass
class RunMetrics:
    agent_ids: list[int]
    rows: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        return FIXED_COLUMNS + [f"dist_agent_{a}" for a in self.agent_ids]

    def add_row(self, row: dict) -> None:
        if self.rows and row["coverage"] < self.rows[-1]["coverage"] - 1e-12:
            row = dict(row, coverage=self.rows[-1]["coverage"])
        self.rows.append(row)
        self.events.append({"kind": "metrics", **row})

    def add_event(self, kind: str, tick: int, **data) -> None:
        self.events.append({"kind": kind, "tick": tick, **data})

    def to_csv(self) -> str:
        cols = self.columns()
        lines = [f"# schema_version={CSV_SCHEMA_VERSION}", ",".join(cols)]
        for row in self.rows:
            lines.append(",".join(_fmt(row.get(c, 0)) for c in cols))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(self.to_csv())
        with open(out / "events.jsonl", "w") as f:
            for ev in self.events:
                f.write(json.dumps(ev, separators=(",", ":"),
                                   sort_keys=True) + "\n")
        (out / "summary.json").write_text(
            json.dumps(self.summary, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def replay_metrics(events_path: str | Path) -> RunMetrics:
    """Rebuild the metrics table from an event log, without simulation."""
    rows = []
    events = []
    summary = {}
    with open(events_path) as f:
        for line in f:
            ev = json.loads(line)
            events.append(ev)
            if ev.get("kind") == "metrics":
                rows.append({k: v for k, v in ev.items() if k != "kind"})
            elif ev.get("kind") == "summary":
                summary = {k: v for k, v in ev.items()
                           if k not in ("kind", "tick")}
    agent_ids = sorted(int(c.split("_")[-1]) for c in rows[0]
                       if c.startswith("dist_agent_")) if rows else []
    m = RunMetrics(agent_ids=agent_ids)
    m.rows = rows
    m.events = events
    m.summary = summary
    return m


def summarize(metrics: RunMetrics) -> dict:
    last = metrics.rows[-1] if metrics.rows else {}
    diff_bytes = last.get("bytes_diff", 0)
    s = {
        "coverage": last.get("coverage", 0.0),
        "score": last.get("score", 0),
        "collisions": last.get("collisions", 0),
        "diff_bytes_total": diff_bytes,
        "distance_m": {str(a): last.get(f"dist_agent_{a}", 0.0)
                       for a in metrics.agent_ids},
        "duration_s": last.get("time_s", 0.0),
    }
    s.update(metrics.summary)
    return s
