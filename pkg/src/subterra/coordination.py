"""Per-agent mission management: 1 Hz status exchange with neighbor-state
relay, diff/image request-response, market-based goal deconfliction,
mission modes, beacon deployment rules, and artifact fusion.

All inter-agent interaction goes through mesh envelopes; the node itself is
a plain state machine ticked by the simulator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import mesh
from .geometry import wrap_angle

# priority classes per traffic kind
PRI_CONTROL = 0        # status, telemetry, commands, requests, acks
PRI_ARTIFACT = 1       # artifact reports
PRI_BULK = 2           # map diffs, artifact images

TOPIC_STATUS = "status"
TOPIC_DIFF_REQUEST = "diff_request"
TOPIC_DIFF = "diff"
TOPIC_ARTIFACT = "artifact"
TOPIC_IMAGE_REQUEST = "image_request"
TOPIC_IMAGE = "artifact_image"
TOPIC_COMMAND = "command"
TOPIC_ACK = "ack"

MODE_EXPLORE = "explore"
MODE_REPORT = "report"
MODE_RETURN_HOME = "return_home"
MODE_STOPPED = "stopped"

ARTIFACT_TYPES = ("survivor", "backpack", "phone", "drill", "extinguisher")


@dataclass
class MissionConfig:
    deconflict_radius: float = 10.0
    d_beacon: float = 100.0           # m traveled since last comm anchor
    t_loss: float = 15.0              # s of lost comms before beacon drop
    theta_turn: float = math.radians(80.0)
    turn_window: float = 20.0         # s over which heading change is summed
    fusion_radius: float = 5.0
    fusion_min_count: int = 3
    policy: str = "greedy"            # greedy | silent
    status_cadence: float = 1.0
    diff_cadence: float = 10.0
    max_digests: int = 8
    image_bytes: int = 20000


# ---------------------------------------------------------------------------
# artifact fusion
# ---------------------------------------------------------------------------

@dataclass
class ArtifactDetection:
    type: str
    position: np.ndarray
    confidence: float
    time: float = 0.0


@dataclass
class ArtifactReport:
    id: str
    agent: int
    type: str
    position: np.ndarray
    confidence: float
    count: int = 0
    has_image: bool = True
    status: str = "pending"           # pending | submitted | scored | rejected

    def digest(self) -> dict:
        return {"id": self.id, "type": self.type,
                "position": [round(float(v), 3) for v in self.position],
                "has_image": self.has_image}

    def to_wire(self) -> dict:
        return {"id": self.id, "agent": self.agent, "type": self.type,
                "position": [float(v) for v in self.position],
                "confidence": round(float(self.confidence), 4)}


class ArtifactFuser:
    """Cluster same-type detections within the fusion radius; a report is
    filed only after enough consistent detections, at the confidence-
    weighted centroid. Unreported clusters expire when not reinforced
    (the required classifications form a sequence, not a lifetime tally)."""

    def __init__(self, agent: int, fusion_radius: float, min_count: int,
                 stale_after: float = 20.0):
        self.agent = agent
        self.radius = fusion_radius
        self.min_count = min_count
        self.stale_after = stale_after
        self.clusters: list[dict] = []
        self._n_reports = 0

    def add(self, det: ArtifactDetection) -> ArtifactReport | None:
        now = float(det.time)
        self.clusters = [c for c in self.clusters
                         if c["report"] is not None
                         or now - c["last_t"] <= self.stale_after]
        pos = np.asarray(det.position, dtype=float)
        best = None
        for c in self.clusters:
            if c["type"] != det.type:
                continue
            d = float(np.linalg.norm(c["centroid"] - pos))
            if d <= self.radius and (best is None or d < best[0]):
                best = (d, c)
        if best is None:
            c = {"type": det.type, "w": 0.0, "wpos": np.zeros(3), "count": 0,
                 "centroid": pos.copy(), "report": None, "conf": 0.0,
                 "last_t": now}
            self.clusters.append(c)
        else:
            c = best[1]
            c["last_t"] = now
        w = max(float(det.confidence), 1e-6)
        c["w"] += w
        c["wpos"] = c["wpos"] + w * pos
        c["count"] += 1
        c["conf"] = max(c["conf"], float(det.confidence))
        c["centroid"] = c["wpos"] / c["w"]
        if c["count"] >= self.min_count and c["report"] is None:
            rep = ArtifactReport(
                id=f"a{self.agent}-{self._n_reports}", agent=self.agent,
                type=c["type"], position=c["centroid"].copy(),
                confidence=c["conf"], count=c["count"])
            self._n_reports += 1
            c["report"] = rep
            return rep
        if c["report"] is not None:
            c["report"].position = c["centroid"].copy()
            c["report"].count = c["count"]
        return None

    def reports(self) -> list[ArtifactReport]:
        return [c["report"] for c in self.clusters if c["report"] is not None]


def fuse_artifacts(detections, fusion_radius: float, min_count: int,
                   agent: int = 0) -> list[ArtifactReport]:
    """Batch form: run the stream fuser over a detection sequence."""
    fuser = ArtifactFuser(agent, fusion_radius, min_count)
    for det in detections:
        fuser.add(det)
    return fuser.reports()


# ---------------------------------------------------------------------------
# goal deconfliction
# ---------------------------------------------------------------------------

@dataclass
class GoalOption:
    position: np.ndarray
    cost: float
    agent: int = -1


def goal_select(ga: list[GoalOption], neighbor_goals: list[GoalOption],
                deconflict_radius: float, agent: int = -1
                ) -> GoalOption | None:
    """Market-based goal choice: walk the cost-ordered list until a goal
    does not conflict with any cheaper neighbor goal nearby; fall back to
    the cheapest own goal when everything conflicts.

    Cost ties break toward the lower node id.
    """
    if not ga:
        return None
    if not neighbor_goals or len(ga) == 1:
        return ga[0]

    def conflicts(g: GoalOption) -> bool:
        for n in neighbor_goals:
            if float(np.linalg.norm(np.asarray(g.position)
                                    - np.asarray(n.position))) \
                    < deconflict_radius:
                if g.cost > n.cost or (g.cost == n.cost and agent > n.agent):
                    return True
        return False

    for g in ga:
        if not conflicts(g):
            return g
    return ga[0]


def run_goal_auction(tables: dict[int, list[GoalOption]],
                     deconflict_radius: float, max_rounds: int = 20
                     ) -> tuple[dict[int, GoalOption], dict[int, bool]]:
    """Synchronous decentralized auction: every agent broadcasts its current
    selection, reselects against the others', and repeats to a fixpoint.

    Returns (selection per agent, fallback-fired flag per agent).
    """
    selection = {a: tables[a][0] for a in tables if tables[a]}
    fallback = {a: False for a in selection}
    for _ in range(max_rounds):
        nxt = {}
        for a in sorted(selection):
            ng = [selection[b] for b in sorted(selection) if b != a]
            g = goal_select(tables[a], ng, deconflict_radius, agent=a)
            nxt[a] = g
            fallback[a] = (g is tables[a][0]) and all(
                any(float(np.linalg.norm(x.position - n.position))
                    < deconflict_radius
                    and (x.cost > n.cost
                         or (x.cost == n.cost and a > n.agent))
                    for n in ng)
                for x in tables[a])
        if all(nxt[a] is selection[a] for a in selection):
            break
        selection = nxt
    return selection, fallback


# ---------------------------------------------------------------------------
# status messages
# ---------------------------------------------------------------------------

@dataclass
class AgentStatus:
    agent: int
    pose: tuple[float, float, float, float]
    goal: dict | None                 # {position, cost} or None
    diff_seq_vector: dict[int, int]   # newest diff seq held, per agent
    artifacts: list[dict]
    timestamp: float

    def to_block(self) -> dict:
        return {
            "agent": self.agent,
            "pose": [round(float(v), 3) for v in self.pose],
            "goal": self.goal,
            "diffs": {str(k): int(v) for k, v in
                      sorted(self.diff_seq_vector.items())},
            "artifacts": self.artifacts,
            "ts": round(float(self.timestamp), 3),
        }

    @staticmethod
    def block_bytes(block: dict) -> int:
        return len(json.dumps(block, separators=(",", ":")).encode())


# ---------------------------------------------------------------------------
# mission node
# ---------------------------------------------------------------------------

@dataclass
class SupervisorCommand:
    op: str                            # estop|resume|goto|return_home|
    #                                    deploy_beacon|reset_map|submit|reject
    target: int
    args: dict = field(default_factory=dict)
    timestamp: float = 0.0

    def to_wire(self) -> dict:
        return {"op": self.op, "target": self.target, "args": self.args,
                "ts": self.timestamp}

    @classmethod
    def from_wire(cls, d: dict) -> "SupervisorCommand":
        return cls(op=d["op"], target=int(d["target"]),
                   args=d.get("args", {}), timestamp=float(d.get("ts", 0.0)))


class MissionNode:
    """Task management for one agent (or, with no vehicle, the base)."""

    def __init__(self, agent_id: int, grid, config: MissionConfig,
                 home_position, beacons_carried: int = 0,
                 roster: list[int] | None = None):
        self.id = agent_id
        self.grid = grid
        self.config = config
        self.home = np.asarray(home_position, dtype=float)
        self.mode = MODE_EXPLORE
        self.policy = config.policy
        self.neighbor_table: dict[int, dict] = {}
        self.neighbor_goals: dict[int, GoalOption] = {}
        self.diff_store: dict[int, dict[int, bytes]] = {agent_id: {}}
        self.image_store: dict[str, bytes] = {}
        self.fuser = ArtifactFuser(agent_id, config.fusion_radius,
                                   config.fusion_min_count)
        self.reports: dict[str, ArtifactReport] = {}
        self.acked_reports: set[str] = set()
        self.remote_reports: dict[str, dict] = {}
        self.beacons_carried = beacons_carried
        self.deployed_beacons: list[np.ndarray] = []
        self.blacklist: list[tuple[np.ndarray, float]] = []
        self.roster = roster or []
        self.manual_goal: np.ndarray | None = None
        self.current_goal: GoalOption | None = None
        self.last_status_bytes = 0
        self.events_log: list[dict] = []
        # beacon rule state
        self.anchor_position = self.home.copy()
        self.comm_loss_since: float | None = None
        self.heading_window: list[tuple[float, float]] = []
        self.fired_junctions: set[int] = set()
        self._pending_requests: set[tuple[int, int]] = set()
        self._last_heading: float | None = None

    # -- diff bookkeeping ---------------------------------------------------

    def store_diff(self, agent: int, seq: int, blob: bytes) -> bool:
        store = self.diff_store.setdefault(agent, {})
        if seq in store:
            return False
        store[seq] = blob
        self._pending_requests.discard((agent, seq))
        return True

    def held_vector(self) -> dict[int, int]:
        return {a: max(s) for a, s in self.diff_store.items() if s}

    def missing_seqs(self, agent: int, upto: int) -> list[int]:
        held = self.diff_store.get(agent, {})
        return [s for s in range(upto + 1)
                if s not in held and (agent, s) not in self._pending_requests]

    # -- status ------------------------------------------------------------

    def build_status(self, pose, now: float) -> tuple[dict, bytes]:
        digests = [r.digest() for r in
                   sorted(self.reports.values(), key=lambda r: r.id)]
        digests = digests[-self.config.max_digests:]
        goal = None
        if self.current_goal is not None:
            goal = {"position": [round(float(v), 3)
                                 for v in self.current_goal.position],
                    "cost": round(float(self.current_goal.cost), 3)}
        own = AgentStatus(agent=self.id, pose=tuple(pose), goal=goal,
                          diff_seq_vector=self.held_vector(),
                          artifacts=digests, timestamp=now).to_block()
        self.last_status_bytes = AgentStatus.block_bytes(own)
        neighbors = [blk for _, blk in sorted(self.neighbor_table.items())]
        msg = {"own": own, "neighbors": neighbors}
        return msg, json.dumps(msg, separators=(",", ":")).encode()

    def broadcast_status(self, net: mesh.MeshNetwork, pose, now: float) -> None:
        _, payload = self.build_status(pose, now)
        net.send(self.id, mesh.BROADCAST, TOPIC_STATUS, payload, PRI_CONTROL)

    def _ingest_status_block(self, blk: dict, net: mesh.MeshNetwork,
                             sender: int) -> None:
        agent = int(blk["agent"])
        if agent == self.id:
            return
        old = self.neighbor_table.get(agent)
        if old is not None and old.get("ts", -1) >= blk.get("ts", 0):
            return
        self.neighbor_table[agent] = blk
        net.declare_known(self.id, agent)
        if blk.get("goal"):
            self.neighbor_goals[agent] = GoalOption(
                position=np.array(blk["goal"]["position"], dtype=float),
                cost=float(blk["goal"]["cost"]), agent=agent)
        else:
            self.neighbor_goals.pop(agent, None)
        # request whatever diffs the sender knows about and we do not hold
        for a_str, latest in blk.get("diffs", {}).items():
            a = int(a_str)
            if a == self.id:
                continue
            missing = self.missing_seqs(a, int(latest))
            if missing:
                req = {"for": a, "seqs": missing, "from": self.id}
                net.send(self.id, sender, TOPIC_DIFF_REQUEST,
                         json.dumps(req).encode(), PRI_CONTROL)
                for s in missing:
                    self._pending_requests.add((a, s))
        # request images for advertised artifacts we do not hold
        for dig in blk.get("artifacts", []):
            rid = dig["id"]
            if dig.get("has_image") and rid not in self.image_store \
                    and rid not in self.reports:
                self.remote_reports.setdefault(rid, dig)
                req = {"id": rid, "from": self.id}
                net.send(self.id, sender, TOPIC_IMAGE_REQUEST,
                         json.dumps(req).encode(), PRI_CONTROL)

    # -- inbox dispatch ------------------------------------------------------

    def handle_inbox(self, envelopes: list[mesh.Envelope],
                     net: mesh.MeshNetwork, now: float) -> list[dict]:
        """Process received envelopes; returns mission events."""
        events: list[dict] = []
        for env in envelopes:
            if env.topic == TOPIC_STATUS:
                msg = json.loads(env.payload.decode())
                self._ingest_status_block(msg["own"], net, env.src)
                for blk in msg.get("neighbors", []):
                    self._ingest_status_block(blk, net, env.src)
            elif env.topic == TOPIC_DIFF_REQUEST:
                req = json.loads(env.payload.decode())
                store = self.diff_store.get(int(req["for"]), {})
                for s in req["seqs"]:
                    blob = store.get(int(s))
                    if blob is not None:
                        net.send(self.id, int(req["from"]), TOPIC_DIFF, blob,
                                 PRI_BULK)
            elif env.topic == TOPIC_DIFF:
                from .voxmap import DiffPatch
                patch = DiffPatch.from_bytes(env.payload)
                if self.store_diff(patch.agent, patch.seq, env.payload) \
                        and patch.agent != self.id:
                    self.grid.merge_patch(patch, self_priority=True)
                    self._expire_blacklist(patch)
                    events.append({"kind": "map_update",
                                   "agent": patch.agent, "seq": patch.seq})
            elif env.topic == TOPIC_IMAGE_REQUEST:
                req = json.loads(env.payload.decode())
                blob = self.image_store.get(req["id"])
                if blob is not None:
                    head = json.dumps({"id": req["id"]}).encode() + b"\0"
                    net.send(self.id, int(req["from"]), TOPIC_IMAGE,
                             head + blob, PRI_BULK)
            elif env.topic == TOPIC_IMAGE:
                head, _, blob = env.payload.partition(b"\0")
                rid = json.loads(head.decode())["id"]
                self.image_store[rid] = blob
            elif env.topic == TOPIC_ARTIFACT:
                rep = json.loads(env.payload.decode())
                events.append({"kind": "artifact_report", "report": rep,
                               "src": env.src})
            elif env.topic == TOPIC_ACK:
                ack = json.loads(env.payload.decode())
                if ack.get("kind") == "artifact":
                    self.acked_reports.update(ack.get("ids", []))
                    events.append({"kind": "base_ack",
                                   "ids": ack.get("ids", [])})
            elif env.topic == TOPIC_COMMAND:
                cmd = SupervisorCommand.from_wire(
                    json.loads(env.payload.decode()))
                events.append({"kind": "command", "command": cmd})
        return events

    def _expire_blacklist(self, patch) -> None:
        """Unreachable-goal markers expire once the map changes nearby."""
        if not self.blacklist:
            return
        from .geometry import unpack_keys
        if len(patch.keys) == 0:
            return
        pts = (unpack_keys(patch.keys) + 0.5) * self.grid.resolution
        keep = []
        for center, radius in self.blacklist:
            d = np.linalg.norm(pts - center[None, :], axis=1)
            if not (d < radius).any():
                keep.append((center, radius))
        self.blacklist = keep

    def note_own_map_update(self, changed_points: np.ndarray) -> None:
        if not self.blacklist or len(changed_points) == 0:
            return
        keep = []
        for center, radius in self.blacklist:
            d = np.linalg.norm(changed_points - center[None, :], axis=1)
            if not (d < radius).any():
                keep.append((center, radius))
        self.blacklist = keep

    # -- artifacts -----------------------------------------------------------

    def ingest_detection(self, det: ArtifactDetection, rng=None
                         ) -> ArtifactReport | None:
        rep = self.fuser.add(det)
        if rep is not None:
            self.reports[rep.id] = rep
            if rep.has_image:
                import zlib
                seed = zlib.crc32(rep.id.encode())
                blob = np.random.default_rng(seed).bytes(
                    self.config.image_bytes)
                self.image_store[rep.id] = blob
        return rep

    def unacked_reports(self) -> list[ArtifactReport]:
        return [r for r in self.reports.values()
                if r.id not in self.acked_reports]

    def transmit_reports(self, net: mesh.MeshNetwork, base_id: int) -> int:
        n = 0
        for rep in sorted(self.unacked_reports(), key=lambda r: r.id):
            payload = json.dumps(rep.to_wire()).encode()
            net.send(self.id, base_id, TOPIC_ARTIFACT, payload, PRI_ARTIFACT)
            n += 1
        return n

    # -- mission step ---------------------------------------------------------

    def mission_step(self, now: float, events: list[dict], context: dict
                     ) -> dict:
        """Advance the mode state machine one tick.

        `context` carries: position, heading, base_connected (bool),
        at_junction (junction id or None), distance_traveled (m total).
        Returns the actions the vehicle layer executes.
        """
        actions = {"velocity_zero": False, "target": None,
                   "deploy_beacon": False, "transmit_reports": False,
                   "reset_layers": [], "replan": False}
        cmds = sorted((e["command"] for e in events if e["kind"] == "command"),
                      key=lambda c: c.timestamp)
        for cmd in cmds:
            self.events_log.append({"t": now, "cmd": cmd.op})
            if cmd.op == "estop":
                self.mode = MODE_STOPPED
            elif cmd.op == "resume":
                if self.mode == MODE_STOPPED:
                    self.mode = MODE_EXPLORE
                self.manual_goal = None
            elif cmd.op == "goto":
                self.manual_goal = np.array(cmd.args["position"], dtype=float)
                if self.mode != MODE_STOPPED:
                    self.mode = MODE_EXPLORE
                actions["replan"] = True
            elif cmd.op == "return_home":
                self.mode = MODE_RETURN_HOME
            elif cmd.op == "deploy_beacon":
                if self.beacons_carried > 0:
                    actions["deploy_beacon"] = True
            elif cmd.op == "reset_map":
                actions["reset_layers"].append(int(cmd.args["agent"]))

        for e in events:
            if e["kind"] == "goal_unreachable":
                center = np.array(e["position"], dtype=float)
                self.blacklist.append((center,
                                       self.config.deconflict_radius))
                actions["replan"] = True
            elif e["kind"] == "base_ack":
                pass  # acked set already updated in handle_inbox

        if self.mode == MODE_STOPPED:
            actions["velocity_zero"] = True
            return actions

        pending = self.unacked_reports()
        if self.mode == MODE_EXPLORE and pending:
            self.mode = MODE_REPORT
        if self.mode == MODE_REPORT:
            actions["transmit_reports"] = True
            if not pending:
                self.mode = MODE_EXPLORE
            elif context.get("base_connected", False):
                # connected: reports flow now; greedy keeps exploring depth
                if self.policy == "greedy":
                    actions["target"] = None
                else:
                    actions["target"] = self.home
            else:
                # out of comms: head toward the base / last comm anchor
                if self.policy == "greedy":
                    actions["target"] = self.anchor_position
                else:
                    actions["target"] = self.home
        if self.mode == MODE_RETURN_HOME:
            actions["target"] = self.home
        if self.manual_goal is not None and self.mode == MODE_EXPLORE:
            actions["target"] = self.manual_goal
            if np.linalg.norm(np.asarray(context["position"])[:2]
                              - self.manual_goal[:2]) < 1.0:
                self.manual_goal = None
                actions["target"] = None
                actions["replan"] = True

        # beacon bookkeeping
        if context.get("base_connected", False):
            self.anchor_position = np.asarray(context["position"],
                                              dtype=float).copy()
            self.comm_loss_since = None
        elif self.comm_loss_since is None:
            self.comm_loss_since = now
        h = context.get("heading")
        if h is not None:
            if self._last_heading is not None:
                d = abs(wrap_angle(h - self._last_heading))
                self.heading_window.append((now, d))
            self._last_heading = h
            self.heading_window = [(t, d) for t, d in self.heading_window
                                   if now - t <= self.config.turn_window]
        return actions

    def beacon_decision(self, now: float, context: dict) -> bool:
        """Deploy when any rule fires; refuses on empty inventory."""
        if self.beacons_carried <= 0:
            self.events_log.append({"t": now, "beacon": "refused_empty"})
            return False
        pos = np.asarray(context["position"], dtype=float)
        if float(np.linalg.norm(pos[:2] - self.anchor_position[:2])) \
                > self.config.d_beacon:
            return True
        if self.comm_loss_since is not None \
                and now - self.comm_loss_since > self.config.t_loss:
            return True
        junction = context.get("at_junction")
        if junction is not None and junction not in self.fired_junctions:
            self.fired_junctions.add(junction)
            return True
        if sum(d for _, d in self.heading_window) > self.config.theta_turn:
            return True
        return False

    def deploy_beacon(self, position) -> bool:
        if self.beacons_carried <= 0:
            return False
        self.beacons_carried -= 1
        pos = np.asarray(position, dtype=float).copy()
        self.deployed_beacons.append(pos)
        self.anchor_position = pos.copy()
        self.heading_window.clear()
        return True


# ---------------------------------------------------------------------------
# base-station scoreboard
# ---------------------------------------------------------------------------

class BaseScoreboard:
    """Authoritative artifact report table at the base station."""

    def __init__(self, fusion_radius: float = 5.0, auto_submit: bool = True):
        self.fusion_radius = fusion_radius
        self.auto_submit = auto_submit
        self.reports: dict[str, dict] = {}
        self.submitted: list[dict] = []

    def ingest(self, rep: dict) -> str:
        """Merge an incoming report; same-type reports within the fusion
        radius collapse onto the first one received."""
        pos = np.array(rep["position"], dtype=float)
        for rid, other in self.reports.items():
            if other["type"] != rep["type"]:
                continue
            if np.linalg.norm(np.array(other["position"]) - pos) \
                    <= self.fusion_radius:
                other.setdefault("merged_ids", []).append(rep["id"])
                return rid
        self.reports[rep["id"]] = dict(rep, status="pending")
        if self.auto_submit:
            self.submit(rep["id"])
        return rep["id"]

    def edit(self, rid: str, position=None, type_=None) -> bool:
        rep = self.reports.get(rid)
        if rep is None or rep["status"] != "pending":
            return False
        if position is not None:
            rep["position"] = [float(v) for v in position]
        if type_ is not None:
            rep["type"] = type_
        return True

    def submit(self, rid: str) -> bool:
        rep = self.reports.get(rid)
        if rep is None or rep["status"] != "pending":
            return False
        rep["status"] = "submitted"
        self.submitted.append(dict(rep))
        return True

    def reject(self, rid: str) -> bool:
        rep = self.reports.get(rid)
        if rep is None or rep["status"] != "pending":
            return False
        rep["status"] = "rejected"
        return True

    def pending(self) -> list[dict]:
        return [r for r in self.reports.values() if r["status"] == "pending"]
