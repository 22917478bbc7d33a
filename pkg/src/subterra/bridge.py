"""Supervisor bridge: a WebSocket endpoint that streams live simulation
snapshots at 2 Hz and accepts supervisor commands, which are injected into
the simulated mesh as class-0 envelopes.

Message schema (all JSON text frames, schema_version 1):
  server -> client: {kind: snapshot, schema_version, tick, body}
                    {kind: ack, schema_version, tick, body: {cmd_id, status}}
                    {kind: error, schema_version, tick, body: {message}}
  client -> server: {kind: command, cmd_id, body: {op, target, args}}

The read path never mutates the simulation; every mutation flows through
the command queue drained at tick boundaries.
"""

from __future__ import annotations

import asyncio
import json
import threading
import time as wallclock

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse

from . import coordination as co
from .scenario import Scenario
from .sim import Simulation

SCHEMA_VERSION = 1
SNAPSHOT_PERIOD = 0.5          # simulated seconds between snapshots
VALID_OPS = ("estop", "resume", "goto", "return_home", "deploy_beacon",
             "reset_map", "submit", "reject", "edit")


def build_snapshot(sim: Simulation) -> dict:
    """Read-only view of the running sim, small enough for a text frame."""
    agents = []
    for a in sim.agents:
        goal = None
        if a.mission.current_goal is not None:
            goal = [round(float(v), 2)
                    for v in a.mission.current_goal.position]
        path = []
        if a.path is not None:
            step = max(1, len(a.path) // 50)
            path = [[round(float(v), 2) for v in w[:2]]
                    for w in a.path[::step]]
        agents.append({
            "id": a.id,
            "kind": a.robot.kind,
            "pose": [round(float(v), 3) for v in a.robot.pose],
            "mode": a.mission.mode,
            "goal": goal,
            "manual_goal": None if a.mission.manual_goal is None else
                           [round(float(v), 2) for v in a.mission.manual_goal],
            "path": path,
            "battery": round(max(0.0, 1.0 - sim.time / 3600.0), 3),
            "beacons_carried": a.mission.beacons_carried,
            "merged_layers": sorted(a.grid.layers.keys()),
        })
    beacons = [{"id": nid, "position": [round(float(v), 2)
                                        for v in n.position]}
               for nid, n in sorted(sim.net.nodes.items())
               if n.kind == "beacon"]
    links = []
    ids = sorted(sim.net.nodes)
    for i, u in enumerate(ids):
        for v in ids[i + 1:]:
            if sim.net.usable(u, v):
                links.append([u, v])
    slice_z = sim.agents[0].grid.world_to_key(sim.world.spawns[0])[2] \
        if sim.agents else 0
    return {
        "time_s": round(sim.time, 2),
        "world_dims": [round(float(d), 2) for d in sim.world.dims_m()],
        "resolution": sim.world.resolution,
        "agents": agents,
        "beacons": beacons,
        "links": links,
        "coverage": round(sim.coverage(), 4),
        "score": sim.current_score(),
        "artifacts": [dict(r, position=[round(float(v), 2)
                                        for v in r["position"]])
                      for r in sim.scoreboard.reports.values()],
        "map_slice": _rle_slice(sim, slice_z),
        "slice_z": slice_z,
    }


def _rle_slice(sim: Simulation, k: int) -> dict:
    """Merged 2D occupancy slice, run-length encoded per row:
    0 unknown, 1 free, 2 occupied."""
    grid = None
    for a in sim.agents:
        m = a.grid
        cls = np.zeros(m.shape[:2], dtype=np.uint8)
        cls[m.free_mask()[:, :, k]] = 1
        cls[m.occupied_mask()[:, :, k]] = 2
        if grid is None:
            grid = cls
        else:
            grid = np.where(grid == 0, cls, grid)
    if grid is None:
        return {"rows": [], "width": 0}
    rows = []
    for i in range(grid.shape[0]):
        row = grid[i]
        runs = []
        j = 0
        while j < len(row):
            v = int(row[j])
            j0 = j
            while j < len(row) and row[j] == v:
                j += 1
            runs.append([v, j - j0])
        rows.append(runs)
    return {"rows": rows, "width": int(grid.shape[1])}


class BridgeServer:
    """Owns the live simulation loop and the command queue."""

    def __init__(self, scenario: Scenario, speedup: float = 4.0):
        self.sim = Simulation(scenario)
        self.speedup = speedup
        self.lock = threading.Lock()
        self.running = False
        self._thread: threading.Thread | None = None
        self._last_snapshot_t = -1e9

    def start(self) -> None:
        if self.running:
            return
        self.running = True
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.running = False
        if self._thread is not None:
            self._thread.join(timeout=5)

    def _loop(self) -> None:
        dt = self.sim.scenario.timing.dt
        while self.running and self.sim.time \
                < self.sim.scenario.timing.duration:
            t0 = wallclock.perf_counter()
            with self.lock:
                self.sim.step()
            budget = dt / max(self.speedup, 1e-3)
            elapsed = wallclock.perf_counter() - t0
            if elapsed < budget:
                wallclock.sleep(budget - elapsed)
        self.running = False

    def step_n(self, n: int) -> None:
        """Deterministic manual stepping (tests drive the sim this way)."""
        with self.lock:
            for _ in range(n):
                self.sim.step()

    def snapshot_message(self) -> dict:
        with self.lock:
            body = build_snapshot(self.sim)
            tick = self.sim.tick_index
        return {"kind": "snapshot", "schema_version": SCHEMA_VERSION,
                "tick": tick, "body": body}

    def apply_command(self, body: dict) -> tuple[bool, str]:
        op = body.get("op")
        if op not in VALID_OPS:
            return False, f"unknown op {op!r}"
        target = body.get("target", self.sim.scenario.base_id)
        known = {a.id for a in self.sim.agents} | {self.sim.scenario.base_id}
        if target not in known:
            return False, f"unknown agent {target}"
        args = body.get("args", {})
        if op == "goto" and "position" not in args:
            return False, "goto requires args.position"
        if op == "reset_map" and "agent" not in args:
            return False, "reset_map requires args.agent"
        with self.lock:
            self.sim.enqueue_command(co.SupervisorCommand(
                op=op, target=int(target), args=args))
        reachable = op in ("submit", "reject", "edit") or \
            self.sim.net.reachable(self.sim.scenario.base_id, int(target))
        return True, "queued" if reachable else "pending delivery"


def make_app(scenario: Scenario, speedup: float = 4.0,
             autostart: bool = True, server: BridgeServer | None = None
             ) -> FastAPI:
    app = FastAPI()
    bridge = server or BridgeServer(scenario, speedup)
    app.state.bridge = bridge

    @app.on_event("startup")
    def _startup():
        if autostart:
            bridge.start()

    @app.on_event("shutdown")
    def _shutdown():
        bridge.stop()

    @app.get("/")
    def index() -> HTMLResponse:
        from pathlib import Path
        root = Path(__file__).resolve().parents[2] / "frontend"
        page = root / "index.html"
        if page.exists():
            return HTMLResponse(page.read_text())
        return HTMLResponse(
            "<html><body><h3>subterra supervisor bridge</h3>"
            "<p>WebSocket endpoint: <code>/ws</code>. Build the console "
            "with <code>cd frontend && npm run build</code> to serve the "
            "UI here.</p></body></html>")

    @app.get("/dist/{path:path}")
    def dist(path: str):
        from pathlib import Path

        from fastapi.responses import FileResponse, PlainTextResponse
        root = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        target = (root / path).resolve()
        if root.exists() and target.is_file() \
                and str(target).startswith(str(root)):
            return FileResponse(target, media_type="text/javascript")
        return PlainTextResponse("not found", status_code=404)

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        # sync-then-stream: a full snapshot immediately on connect
        await ws.send_text(json.dumps(bridge.snapshot_message()))
        last_tick = -1
        try:
            while True:
                try:
                    raw = await asyncio.wait_for(ws.receive_text(),
                                                 timeout=SNAPSHOT_PERIOD / 2)
                    msg = json.loads(raw)
                    if msg.get("kind") == "command":
                        ok, info = bridge.apply_command(msg.get("body", {}))
                        kind = "ack" if ok else "error"
                        await ws.send_text(json.dumps(
                            {"kind": kind, "schema_version": SCHEMA_VERSION,
                             "tick": bridge.sim.tick_index,
                             "body": {"cmd_id": msg.get("cmd_id"),
                                      "status": info}}))
                    elif msg.get("kind") == "step":
                        bridge.step_n(int(msg.get("n", 1)))
                    elif msg.get("kind") == "poll":
                        await ws.send_text(json.dumps(
                            bridge.snapshot_message()))
                        last_tick = bridge.sim.tick_index
                    elif msg.get("kind") == "get_session":
                        await ws.send_text(json.dumps(
                            {"kind": "session",
                             "schema_version": SCHEMA_VERSION,
                             "tick": bridge.sim.tick_index,
                             "body": {
                                 "commands": bridge.sim.recorded_session(),
                                 "score": bridge.sim.current_score(),
                             }}))
                except asyncio.TimeoutError:
                    pass
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"kind": "error", "schema_version": SCHEMA_VERSION,
                         "tick": bridge.sim.tick_index,
                         "body": {"message": "malformed frame"}}))
                sim_t = bridge.sim.time
                if bridge.running and bridge.sim.tick_index != last_tick \
                        and sim_t - bridge._last_snapshot_t \
                        >= SNAPSHOT_PERIOD:
                    bridge._last_snapshot_t = sim_t
                    await ws.send_text(json.dumps(bridge.snapshot_message()))
                    last_tick = bridge.sim.tick_index
        except WebSocketDisconnect:
            return

    return app
