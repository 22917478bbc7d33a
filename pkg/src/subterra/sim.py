"""The integrated simulator: world, agents (mapping + planning + control +
mission node), base station, and mesh transport, advanced by a fixed tick.

Everything derives from the scenario seed; a run is a pure function of
(scenario, seed).
"""

from __future__ import annotations

import json
import math
import time as wallclock
from dataclasses import dataclass, field

import numpy as np

from . import coordination as co
from . import frontier as fr
from . import mesh
from . import world as sw
from .geometry import polyline_length, project_to_polyline, wrap_angle
from .metrics import RunMetrics, summarize
from .reactive import ControlGains, compute_lookahead, uav_local_command
from .scenario import Scenario
from .voxmap import OccupancyGrid

SENSOR_SPECS = {
    "planar_scan": sw.PlanarScanSpec,
    "lidar3d": sw.Lidar3DSpec,
    "depth_cam": sw.DepthCamSpec,
}


def plan_to_point(grid: OccupancyGrid, x, target, params: fr.PlannerParams
                  ) -> np.ndarray | None:
    """Point-goal path over the current map (report / return-home / goto)."""
    dist_field = grid.compute_distance_field(
        exclude_ground=(params.vehicle == "ground"))
    trav = grid.classify_traversable(dist_field, params.vehicle,
                                     params.r_safe)
    start = fr._seed_voxel(trav.mask, grid.world_to_key(x))
    goal = fr._seed_voxel(trav.mask, grid.world_to_key(target))
    if start is None or goal is None:
        return None
    if start == goal:
        return np.array([grid.key_to_center(start)])
    speed = fr.compute_speed_map(dist_field, params.clearance_e)
    marcher = fr.FastMarcher(speed.speed, trav.mask, grid.resolution, start,
                             params.v_nominal)
    targets = np.zeros(grid.shape, dtype=bool)
    targets[goal] = True
    while True:
        key, code = marcher.march(targets=targets)
        if code == 0:
            return None
        if code == 1 and tuple(key) == goal:
            break
    try:
        return fr.extract_path(marcher.T, goal, start, grid.resolution)
    except fr.PathExtractionError:
        return None


class AgentRuntime:
    def __init__(self, spec, scenario: Scenario, world: sw.WorldModel,
                 seed: int):
        self.id = spec.id
        self.spec = spec
        spawn = world.spawns[0].copy()
        spawn[0] += spec.spawn_offset[0]
        spawn[1] += spec.spawn_offset[1]
        z = spawn[2] if spec.kind == "ground" else spawn[2] + 0.6
        self.robot = sw.RobotModel(kind=spec.kind,
                                   pose=np.array([spawn[0], spawn[1], z, 0.0]),
                                   v_max=spec.v_max,
                                   body_radius=spec.body_radius)
        self.grid = OccupancyGrid(frame=spec.id, shape=world.shape)
        self.err = sw.PoseErrorModel(scenario.noise, agent_seed=seed)
        params = fr.PlannerParams(**vars(scenario.planner))
        params.vehicle = spec.kind
        params.min_separation = scenario.mission.deconflict_radius
        self.params = params
        self.mission = co.MissionNode(
            agent_id=spec.id, grid=self.grid, config=scenario.mission,
            home_position=spawn, beacons_carried=spec.beacons_carried)
        self.sensors = [SENSOR_SPECS[s]() for s in spec.sensors]
        if spec.kind == "quad" and not any(
                s.kind == "depth_cam" for s in self.sensors):
            self.sensors.append(sw.DepthCamSpec())
        self.gains = ControlGains(v_x_max=spec.v_max,
                                  v_theta_max=self.robot.omega_max,
                                  psi_dot_max=params.psi_dot_max)
        self.rng = np.random.default_rng(seed)
        self.path: np.ndarray | None = None
        self.path_target: np.ndarray | None = None
        self.pending_events: list[dict] = []
        self.exploration_complete = False
        self.last_progress = (0.0, math.inf)   # (time, best dist-to-goal)
        self.last_report_tx = -1e9
        self.plan_count = 0
        self.last_actions: dict = {}

    def believed_pose(self) -> np.ndarray:
        return self.err.believed(self.robot.pose,
                                 self.robot.distance_traveled)

    def to_world_frame(self, p_body_hits: np.ndarray, bel: np.ndarray
                      ) -> np.ndarray:
        c, s = math.cos(bel[3]), math.sin(bel[3])
        return np.stack([bel[0] + c * p_body_hits[:, 0] - s * p_body_hits[:, 1],
                         bel[1] + s * p_body_hits[:, 0] + c * p_body_hits[:, 1],
                         bel[2] + p_body_hits[:, 2]], axis=1)


class Simulation:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        self.world = sw.generate_world(
            scenario.world.kind, scenario.world.seed, scenario.world.dims,
            scenario.world.resolution, scenario.world.n_artifacts)
        if scenario.world.artifacts:
            placed = []
            for a_type, pos in scenario.world.artifacts:
                p = np.asarray(pos, dtype=float)
                key = tuple(int(v / self.world.resolution) for v in p)
                if not self.world.reachable_free[key]:
                    from .scenario import ScenarioError
                    raise ScenarioError(
                        f"scripted artifact at {pos} is not in reachable "
                        "free space")
                placed.append((a_type, p))
            self.world.artifacts = placed
        ss = np.random.SeedSequence(scenario.seed)
        seeds = ss.spawn(len(scenario.agents) + 2)
        self.net = mesh.MeshNetwork(
            scenario.link, seed=int(seeds[-1].generate_state(1)[0]))
        self.agents = [AgentRuntime(a, scenario, self.world,
                                    int(seeds[i].generate_state(1)[0]))
                       for i, a in enumerate(scenario.agents)]
        base_grid = OccupancyGrid(frame=scenario.base_id, shape=self.world.shape)
        base_home = self.world.spawns[0]
        self.base = co.MissionNode(agent_id=scenario.base_id, grid=base_grid,
                                   config=scenario.mission,
                                   home_position=base_home)
        self.scoreboard = co.BaseScoreboard(
            fusion_radius=scenario.mission.fusion_radius,
            auto_submit=scenario.auto_submit)
        self.net.add_node(scenario.base_id, "base", base_home)
        for a in self.agents:
            self.net.add_node(a.id, "robot", a.robot.pose[:3])
        self.tick_index = 0
        self.metrics = RunMetrics(agent_ids=[a.id for a in self.agents])
        self.detect_rng = np.random.default_rng(
            int(seeds[-2].generate_state(1)[0]))
        self._beacon_counter = 0
        self._collisions = 0
        self._plan_wall: list[float] = []
        self._supervisor_queue: list[co.SupervisorCommand] = []
        self._script = sorted(scenario.supervisor_script,
                              key=lambda c: float(c["t"]))
        self._script_pos = 0
        self._session_record: list[dict] = []
        self.base_acked: set[str] = set()

    # -- public control (bridge / script) -----------------------------------

    @property
    def time(self) -> float:
        return self.tick_index * self.scenario.timing.dt

    def enqueue_command(self, cmd: co.SupervisorCommand, record: bool = True
                        ) -> None:
        cmd.timestamp = self.time
        self._supervisor_queue.append(cmd)
        if record:
            # recorded at the dispatch tick so a script replay fires the
            # command on exactly the same tick as the live session
            self._session_record.append(
                {"t": round(self.time + self.scenario.timing.dt, 4),
                 "op": cmd.op, "target": cmd.target, "args": cmd.args})

    def recorded_session(self) -> list[dict]:
        return list(self._session_record)

    # -- stepping ------------------------------------------------------------

    def run(self, duration: float | None = None) -> RunMetrics:
        duration = self.scenario.timing.duration if duration is None \
            else duration
        n = int(round(duration / self.scenario.timing.dt))
        for _ in range(n):
            self.step()
        self.finalize()
        return self.metrics

    def step(self) -> None:
        t = self.scenario.timing
        self.tick_index += 1
        now = self.time

        # timed supervisor script
        while self._script_pos < len(self._script) \
                and float(self._script[self._script_pos]["t"]) <= now:
            e = self._script[self._script_pos]
            self._script_pos += 1
            self.enqueue_command(co.SupervisorCommand(
                op=e["op"], target=int(e.get("target", self.scenario.base_id)),
                args=e.get("args", {})), record=False)
        self._dispatch_supervisor()

        for agent in self.agents:
            self._agent_tick(agent, now, t)

        self._base_tick(now, t)

        for agent in self.agents:
            self.net.set_position(agent.id, agent.robot.pose[:3])
        self.net.tick(t.dt)

        if self.tick_index % t.status_every == 0:
            self._record_metrics(now)

    # -- supervisor ----------------------------------------------------------

    def _dispatch_supervisor(self) -> None:
        for cmd in self._supervisor_queue:
            self.metrics.add_event("command", self.tick_index, op=cmd.op,
                                   target=cmd.target)
            if cmd.op in ("submit", "reject", "edit"):
                self._apply_scoreboard_cmd(cmd)
                continue
            targets = [cmd.target]
            if cmd.op == "reset_map":
                targets = [a.id for a in self.agents]
                self.base.grid.reset_agent_layer(int(cmd.args["agent"]))
            payload = json.dumps(cmd.to_wire()).encode()
            for tgt in targets:
                if tgt == self.scenario.base_id:
                    continue
                self.net.send(self.scenario.base_id, tgt, co.TOPIC_COMMAND,
                              payload, co.PRI_CONTROL)
        self._supervisor_queue.clear()

    def _apply_scoreboard_cmd(self, cmd: co.SupervisorCommand) -> None:
        rid = cmd.args.get("id")
        if cmd.op == "edit":
            self.scoreboard.edit(rid, position=cmd.args.get("position"),
                                 type_=cmd.args.get("type"))
        elif cmd.op == "submit":
            self.scoreboard.submit(rid)
        elif cmd.op == "reject":
            self.scoreboard.reject(rid)

    # -- per-agent tick --------------------------------------------------------

    def _agent_tick(self, agent: AgentRuntime, now: float, t) -> None:
        bel = agent.believed_pose()

        if self.tick_index % t.sense_every == 0:
            self._sense_and_integrate(agent, bel)

        if self.tick_index % t.detect_every == 0:
            for det in sw.detect_artifacts(self.world, agent.robot,
                                           self.scenario.detector,
                                           self.detect_rng):
                p_bel = agent.err.rot @ det["position"]
                rep = agent.mission.ingest_detection(co.ArtifactDetection(
                    type=det["type"], position=p_bel,
                    confidence=det["confidence"], time=now))
                if rep is not None:
                    agent.pending_events.append(
                        {"kind": "artifact_ready", "id": rep.id})
                    self.metrics.add_event("artifact_fused", self.tick_index,
                                           agent=agent.id, id=rep.id)

        inbox = self.net.drain_inbox(agent.id)
        events = agent.mission.handle_inbox(inbox, self.net, now)
        events.extend(agent.pending_events)
        agent.pending_events = []

        if self.tick_index % t.status_every == 0:
            agent.mission.broadcast_status(self.net, tuple(bel), now)
        if self.tick_index % t.diff_every == 0:
            patch = agent.grid.create_diff(close_interval=True)
            agent.mission.store_diff(agent.id, patch.seq, patch.to_bytes())

        base_connected = self.net.reachable(agent.id, self.scenario.base_id)
        context = {
            "position": agent.robot.pose[:3],
            "heading": float(agent.robot.pose[3]),
            "base_connected": base_connected,
            "at_junction": self._junction_near(agent),
            "distance_traveled": agent.robot.distance_traveled,
        }
        actions = agent.mission.mission_step(now, events, context)
        agent.last_actions = actions

        for layer in actions["reset_layers"]:
            if layer != agent.id:
                agent.grid.reset_agent_layer(layer)
        if actions["transmit_reports"] and now - agent.last_report_tx > 2.0:
            agent.mission.transmit_reports(self.net, self.scenario.base_id)
            agent.last_report_tx = now
        if actions["deploy_beacon"] or (
                self.tick_index % t.status_every == 0
                and agent.mission.beacon_decision(now, context)):
            self._deploy_beacon(agent)

        replan_due = (self.tick_index + agent.id * 3) % t.plan_every == 0
        if actions.get("replan"):
            replan_due = True
        if agent.mission.mode != co.MODE_STOPPED and (
                replan_due or (agent.path is None
                               and self.tick_index % t.status_every == 0)):
            self._replan(agent, bel, actions, now)

        self._check_progress(agent, bel, now)

        cmd = self._control(agent, bel)
        if agent.mission.mode == co.MODE_STOPPED or actions["velocity_zero"]:
            cmd = (0.0, 0.0, 0.0)
        events_dyn = sw.step_dynamics(agent.robot, cmd,
                                      self.scenario.timing.dt, self.world)
        for ev in events_dyn:
            if ev == "collision":
                self._collisions += 1
                self.metrics.add_event("collision", self.tick_index,
                                       agent=agent.id)
            elif ev == "estop_nan":
                agent.mission.mode = co.MODE_STOPPED
                self.metrics.add_event("estop_nan", self.tick_index,
                                       agent=agent.id)

    def _sense_and_integrate(self, agent: AgentRuntime, bel) -> None:
        from .geometry import raycast_cells
        for spec in agent.sensors:
            if spec.kind == "depth_cam":
                continue  # used by the reactive controller, not mapping
            scan = sw.sense(self.world, agent.robot, spec,
                            self.scenario.noise, agent.rng)
            if spec.kind == "planar_scan":
                true = agent.robot.pose
                c, s = math.cos(true[3]), math.sin(true[3])
                dirs_body = np.stack([np.cos(scan.angles),
                                      np.sin(scan.angles),
                                      np.zeros_like(scan.angles)], axis=1)
                dirs_world = np.stack(
                    [c * dirs_body[:, 0] - s * dirs_body[:, 1],
                     s * dirs_body[:, 0] + c * dirs_body[:, 1],
                     dirs_body[:, 2]], axis=1)
                origin_t = np.array([true[0], true[1], true[2] + spec.height])
                d, cells = raycast_cells(self.world.solid, origin_t,
                                         dirs_world, spec.max_range,
                                         self.world.resolution)
                hit = cells[:, 0] >= 0
                pts_body = dirs_body * d[:, None]
                hit_body = np.zeros_like(pts_body)
                if hit.any():
                    centers_w = (cells[hit] + 0.5) * self.world.resolution
                    dw = centers_w - origin_t[None, :]
                    ci, si = math.cos(-true[3]), math.sin(-true[3])
                    hit_body[hit] = np.stack(
                        [ci * dw[:, 0] - si * dw[:, 1],
                         si * dw[:, 0] + ci * dw[:, 1], dw[:, 2]], axis=1)
                pts_body[:, 2] += spec.height
                hit_body[:, 2] += spec.height
            else:
                pts_body = scan.points_body
                hit = scan.hit_mask
                hit_body = scan.hit_points_body
            wpts = agent.to_world_frame(pts_body, bel)
            occ_pts = agent.to_world_frame(hit_body[hit], bel) if hit.any() \
                else wpts[:0]
            origin = np.array([bel[0], bel[1], bel[2] + spec.height])
            agent.grid.integrate_scan(origin, wpts, spec.max_range + 0.5,
                                      hit, occupied_points=occ_pts)
            agent.mission.note_own_map_update(occ_pts)

    def _junction_near(self, agent: AgentRuntime):
        pos = agent.robot.pose[:2]
        for i, j in enumerate(self.world.junctions):
            if float(np.linalg.norm(pos - j[:2])) < 2.0:
                return i
        return None

    def _deploy_beacon(self, agent: AgentRuntime) -> None:
        if not agent.mission.deploy_beacon(agent.robot.pose[:3]):
            return
        self._beacon_counter += 1
        bid = 1000 + self._beacon_counter
        self.net.add_node(bid, "beacon", agent.robot.pose[:3])
        self.metrics.add_event("beacon", self.tick_index, agent=agent.id,
                               node=bid)

    # -- planning -------------------------------------------------------------

    def _replan(self, agent: AgentRuntime, bel, actions: dict, now: float
                ) -> None:
        t0 = wallclock.perf_counter()
        target = actions.get("target")
        if target is None and agent.mission.manual_goal is not None:
            target = agent.mission.manual_goal
        if target is not None:
            path = plan_to_point(agent.grid, bel, target, agent.params)
            if path is None:
                agent.pending_events.append(
                    {"kind": "goal_unreachable",
                     "position": [float(v) for v in np.asarray(target)[:3]]})
            else:
                agent.path = path
                agent.path_target = np.asarray(target, dtype=float)
                agent.last_progress = (now, math.inf)
            agent.plan_count += 1
            self._plan_wall.append(wallclock.perf_counter() - t0)
            return

        seed = (self.scenario.seed * 7919 + agent.id * 101
                + agent.plan_count) % (2 ** 31)
        extra = []
        held = agent.mission.current_goal
        if held is not None and agent.path is not None:
            extra = [fr.GoalPose(position=np.asarray(held.position),
                                 heading=float(bel[3]))]
        table = fr.plan(agent.grid, bel, agent.params, rng_seed=seed,
                        blacklist=agent.mission.blacklist,
                        extra_candidates=extra)
        agent.plan_count += 1
        self._plan_wall.append(wallclock.perf_counter() - t0)
        if table.status == "complete":
            if not agent.exploration_complete:
                agent.exploration_complete = True
                self.metrics.add_event("exploration_complete",
                                       self.tick_index, agent=agent.id)
            agent.path = None
            agent.mission.current_goal = None
            return
        agent.exploration_complete = False
        if table.status != "ok" or not table.evaluated:
            return
        # goal hysteresis: the held goal keeps its slot unless a fresh
        # candidate clearly beats it
        ranked = sorted(table.evaluated,
                        key=lambda g: -g.utility * self._goal_bonus(g, held))
        best = []
        for c in ranked:
            if len(best) >= agent.params.m_best:
                break
            if all(np.linalg.norm(c.position - b.position)
                   >= agent.params.min_separation for b in best):
                best.append(c)
        if not best:
            best = [ranked[0]]
        table.best = best
        ga = [co.GoalOption(position=g.position, cost=g.cost, agent=agent.id)
              for g in table.best]
        neighbor_goals = list(agent.mission.neighbor_goals.values())
        chosen_opt = co.goal_select(ga, neighbor_goals,
                                    self.scenario.mission.deconflict_radius,
                                    agent=agent.id)
        chosen = table.best[ga.index(chosen_opt)] if chosen_opt in ga \
            else table.best[0]
        agent.mission.current_goal = co.GoalOption(
            position=chosen.position, cost=chosen.cost, agent=agent.id)
        same_goal = (held is not None and agent.path is not None
                     and float(np.linalg.norm(
                         np.asarray(held.position) - chosen.position)) < 0.5)
        if same_goal:
            return  # keep following the current path
        new_path = chosen.path
        if agent.path is not None and new_path is not None \
                and len(agent.path) > 1:
            agent.path = fr.stitch_receding_horizon(
                agent.path, lambda p: new_path, bel,
                u=agent.spec.v_max, dt_horizon=agent.params.dt_horizon)
        else:
            agent.path = new_path
        agent.path_target = chosen.position
        agent.last_progress = (now, math.inf)

    @staticmethod
    def _goal_bonus(g: fr.GoalPose, held) -> float:
        if held is None:
            return 1.0
        near = float(np.linalg.norm(np.asarray(held.position)
                                    - g.position)) < 0.5
        return 1.3 if near else 1.0

    def _check_progress(self, agent: AgentRuntime, bel, now: float) -> None:
        if agent.path is None or agent.path_target is None:
            return
        dist = float(np.linalg.norm(bel[:2]
                                    - np.asarray(agent.path_target)[:2]))
        t_last, best = agent.last_progress
        if dist < best - 0.25:
            agent.last_progress = (now, dist)
            return
        if dist < 0.8:
            agent.path = None          # goal reached; replan next cycle
            agent.mission.current_goal = None
            return
        if now - t_last > 12.0:
            agent.pending_events.append(
                {"kind": "goal_unreachable",
                 "position": [float(v) for v in
                              np.asarray(agent.path_target)[:3]]})
            self.metrics.add_event("goal_unreachable", self.tick_index,
                                   agent=agent.id)
            agent.path = None
            agent.mission.current_goal = None
            agent.last_progress = (now, math.inf)

    # -- control ---------------------------------------------------------------

    def _control(self, agent: AgentRuntime, bel) -> tuple[float, float, float]:
        if agent.path is None or len(agent.path) < 1:
            return (0.0, 0.0, 0.0)
        if agent.robot.kind == "quad":
            return self._control_quad(agent, bel)
        look = compute_lookahead(agent.path, bel, L=0.8)
        err = wrap_angle(math.atan2(look[1] - bel[1], look[0] - bel[0])
                         - bel[3])
        omega = max(-agent.robot.omega_max,
                    min(agent.robot.omega_max, 3.0 * err))
        if abs(err) > math.radians(55):
            v = 0.0
        else:
            v = agent.spec.v_max * max(0.25, math.cos(err))
            field = agent.grid._cache.get(("edt", True))
            if field is not None:
                d = field.at(agent.grid.world_to_key(bel))
                v *= min(1.0, max(0.35, d / 0.8))
        s, _ = project_to_polyline(agent.path, bel)
        if polyline_length(agent.path) - s < 0.25:
            v = 0.0
        return (v, omega, 0.0)

    def _control_quad(self, agent: AgentRuntime, bel
                      ) -> tuple[float, float, float]:
        look = compute_lookahead(agent.path, bel, L=1.0)
        d_world = look - bel[:3]
        c, s = math.cos(-bel[3]), math.sin(-bel[3])
        d_body = np.array([c * d_world[0] - s * d_world[1],
                           s * d_world[0] + c * d_world[1], d_world[2]])
        n = np.linalg.norm(d_body)
        look_dir = d_body / n if n > 1e-9 else np.zeros(3)
        images = [sw.sense(self.world, agent.robot, spec, self.scenario.noise,
                           agent.rng)
                  for spec in agent.sensors if spec.kind == "depth_cam"]
        cmd = uav_local_command(images, look_dir, agent.gains)
        return (cmd.v_x, cmd.v_theta, cmd.v_z)

    # -- base ---------------------------------------------------------------------

    def _base_tick(self, now: float, t) -> None:
        inbox = self.net.drain_inbox(self.scenario.base_id)
        events = self.base.handle_inbox(inbox, self.net, now)
        acked: dict[int, list[str]] = {}
        for ev in events:
            if ev["kind"] == "artifact_report":
                rep = ev["report"]
                self.scoreboard.ingest(rep)
                acked.setdefault(ev["src"], []).append(rep["id"])
                self.base_acked.add(rep["id"])
                self.metrics.add_event("artifact_at_base", self.tick_index,
                                       id=rep["id"], agent=ev["src"])
        for src, ids in sorted(acked.items()):
            payload = json.dumps({"kind": "artifact", "ids": ids}).encode()
            self.net.send(self.scenario.base_id, src, co.TOPIC_ACK, payload,
                          co.PRI_CONTROL)
        if self.tick_index % t.status_every == 0:
            pose = (*self.base.home, 0.0)
            self.base.broadcast_status(self.net, pose, now)

    # -- metrics ---------------------------------------------------------------------

    def coverage(self) -> float:
        union = None
        for agent in self.agents:
            free = agent.grid.free_mask()
            union = free if union is None else (union | free)
        if union is None:
            return 0.0
        seen = int((union & self.world.reachable_free).sum())
        return seen / max(1, self.world.reachable_free_count())

    def current_score(self) -> int:
        return sw.score(self.scoreboard.submitted, self.world)

    def _record_metrics(self, now: float) -> None:
        st = self.net.stats
        by = {
            "bytes_status": st.offered.get(co.TOPIC_STATUS, 0),
            "bytes_artifact": st.offered.get(co.TOPIC_ARTIFACT, 0),
            "bytes_diff": st.offered.get(co.TOPIC_DIFF, 0),
            "bytes_image": st.offered.get(co.TOPIC_IMAGE, 0),
        }
        other = sum(v for k, v in st.offered.items()
                    if k not in (co.TOPIC_STATUS, co.TOPIC_ARTIFACT,
                                 co.TOPIC_DIFF, co.TOPIC_IMAGE))
        row = {
            "tick": self.tick_index,
            "time_s": round(now, 3),
            "coverage": round(self.coverage(), 6),
            "score": self.current_score(),
            "collisions": self._collisions,
            **by,
            "bytes_other": other,
            "plans": sum(a.plan_count for a in self.agents),
        }
        for a in self.agents:
            row[f"dist_agent_{a.id}"] = round(a.robot.distance_traveled, 3)
        self.metrics.add_row(row)

    def finalize(self) -> None:
        lat = self._plan_wall
        self.metrics.summary = summarize(self.metrics)
        self.metrics.summary.update({
            "planner_wall_ms": {
                "mean": round(1e3 * float(np.mean(lat)), 2) if lat else 0.0,
                "max": round(1e3 * float(np.max(lat)), 2) if lat else 0.0,
                "count": len(lat),
            },
            "transport": self.net.stats.totals(),
            "conservation_ok": self.net.conservation_ok(),
            "artifacts_at_base": len(self.scoreboard.reports),
            "submitted": len(self.scoreboard.submitted),
        })
        self.metrics.events.append(
            {"kind": "summary", "tick": self.tick_index,
             **{k: v for k, v in self.metrics.summary.items()
                if isinstance(v, (int, float, str, bool))}})


# ---------------------------------------------------------------------------
# focused closed-loop runs used by tests and scripts
# ---------------------------------------------------------------------------

def run_uav_avoidance(goal_offset: float, seed: int, duration: float = 60.0,
                      obstacle_size: float = 0.3) -> dict:
    """Single-obstacle flight: start and goal on opposite sides of a small
    column, reactive controller only (the lookahead is the goal itself).

    Returns reached flag, minimum obstacle clearance, and the trajectory.
    """
    rng = np.random.default_rng(seed)
    res = 0.15
    size = max(14.0, 2 * goal_offset + 10.0)
    n = int(size / res)
    nz = int(6.0 / res)
    solid = np.zeros((n, n, nz), dtype=bool)
    solid[0, :, :] = solid[-1, :, :] = True
    solid[:, 0, :] = solid[:, -1, :] = True
    solid[:, :, 0] = solid[:, :, -1] = True
    cx = cy = n // 2
    half = max(1, int(obstacle_size / 2 / res))
    solid[cx - half:cx + half + 1, cy - half:cy + half + 1, 1:nz - 1] = True
    world = sw.WorldModel(solid=solid, resolution=res, kind="lab", seed=seed,
                          spawns=[np.array([size / 2 - goal_offset / 2 - 1.0,
                                            size / 2, 3.0])],
                          artifacts=[], _ground_k=0)
    world.reachable_free = ~solid

    lateral = float(rng.uniform(-0.3, 0.3))
    start = np.array([size / 2 - goal_offset / 2 - 1.0,
                      size / 2 + lateral, 3.0])
    goal = np.array([size / 2 + goal_offset / 2 + 1.0,
                     size / 2 - lateral * 0.5, 3.0])
    robot = sw.RobotModel(kind="quad",
                          pose=np.array([*start, 0.0]), v_max=0.8,
                          body_radius=0.25, vz_max=0.4)
    gains = ControlGains(k_rep=1.6, v_x_max=0.8, v_z_max=0.3,
                         v_theta_max=1.2, u_rep_max=0.3)
    cam = sw.DepthCamSpec(width=48, height_px=36, max_range=5.0,
                          fov_v=math.radians(24.0))
    noise = sw.NoiseModel(depth_sigma=0.01)
    dt = 0.1
    min_clear = math.inf
    traj = [robot.pose.copy()]
    reached = False
    for step in range(int(duration / dt)):
        d_world = goal - robot.pose[:3]
        if float(np.linalg.norm(d_world[:2])) < 0.5:
            reached = True
            break
        psi = robot.pose[3]
        c, s = math.cos(-psi), math.sin(-psi)
        d_body = np.array([c * d_world[0] - s * d_world[1],
                           s * d_world[0] + c * d_world[1], d_world[2]])
        nrm = np.linalg.norm(d_body)
        look = d_body / nrm if nrm > 1e-9 else np.zeros(3)
        img = sw.sense(world, robot, cam, noise, rng)
        cmd = uav_local_command([img], look, gains)
        sw.step_dynamics(robot, (cmd.v_x, cmd.v_theta, cmd.v_z), dt, world)
        # clearance to the column (not the walls): 2D distance to its box
        dx = max(abs(robot.pose[0] - (cx + 0.5) * res)
                 - (half + 0.5) * res, 0.0)
        dy = max(abs(robot.pose[1] - (cy + 0.5) * res)
                 - (half + 0.5) * res, 0.0)
        min_clear = min(min_clear, math.hypot(dx, dy))
        traj.append(robot.pose.copy())
    return {"reached": reached, "min_clearance": min_clear,
            "trajectory": np.array(traj), "collisions": robot.collisions}
