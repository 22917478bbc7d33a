import json
import warnings

import numpy as np
import pytest

from subterra import coordination as co
from subterra.bridge import BridgeServer, build_snapshot, make_app
from subterra.scenario import Scenario, WorldSpec, AgentSpec, TimingSpec


def scripted_scenario(duration=30.0, n_agents=2, script=()):
    return Scenario(
        name="bridge-test", seed=11,
        world=WorldSpec(kind="maze", seed=6, dims=(12, 12, 2.4),
                        n_artifacts=1),
        agents=[AgentSpec(id=i + 1, kind="ground", sensors=("lidar3d",))
                for i in range(n_agents)],
        timing=TimingSpec(duration=duration),
        supervisor_script=list(script))


@pytest.fixture()
def server():
    return BridgeServer(scripted_scenario(), speedup=1000)


@pytest.fixture()
def ws_client(server):
    from fastapi.testclient import TestClient
    app = make_app(server.sim.scenario, autostart=False, server=server)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        client = TestClient(app)
        with client.websocket_connect("/ws") as ws:
            yield server, ws


def send_cmd(ws, op, target, args=None, cmd_id="c0"):
    ws.send_text(json.dumps({"kind": "command", "cmd_id": cmd_id,
                             "body": {"op": op, "target": target,
                                      "args": args or {}}}))
    return json.loads(ws.receive_text())


def poll(ws, server, n=0):
    if n:
        server.step_n(n)
    ws.send_text(json.dumps({"kind": "poll"}))
    return json.loads(ws.receive_text())


# ---------------------------------------------------------------------------

def test_connect_receives_full_snapshot(ws_client):
    server, ws = ws_client
    snap = json.loads(ws.receive_text())
    assert snap["kind"] == "snapshot"
    assert snap["schema_version"] == 1
    body = snap["body"]
    assert len(body["agents"]) == 2
    assert body["map_slice"]["rows"]
    assert "coverage" in body and "score" in body


def test_snapshot_size_under_limit(ws_client):
    server, ws = ws_client
    ws.receive_text()
    server.step_n(100)
    snap = poll(ws, server)
    assert len(json.dumps(snap).encode()) < 256 * 1024


def test_estop_round_trip_within_two_ticks(ws_client):
    server, ws = ws_client
    ws.receive_text()
    server.step_n(15)     # links warm up
    ack = send_cmd(ws, "estop", 2)
    assert ack["kind"] == "ack"
    snap = poll(ws, server, n=2)
    modes = {a["id"]: a["mode"] for a in snap["body"]["agents"]}
    assert modes[2] == "stopped"
    assert modes[1] != "stopped"
    ack = send_cmd(ws, "resume", 2, cmd_id="c1")
    snap = poll(ws, server, n=3)
    modes = {a["id"]: a["mode"] for a in snap["body"]["agents"]}
    assert modes[2] == "explore"


def test_goto_command_sets_manual_goal(ws_client):
    server, ws = ws_client
    ws.receive_text()
    server.step_n(15)
    target = [3.0, 3.0, 0.5]
    ack = send_cmd(ws, "goto", 1, {"position": target})
    assert ack["kind"] == "ack"
    server.step_n(3)
    agent = server.sim.agents[0]
    assert agent.mission.manual_goal is not None
    assert np.allclose(agent.mission.manual_goal, target)


def test_reset_map_drops_neighbor_layer_everywhere(ws_client):
    server, ws = ws_client
    ws.receive_text()
    server.step_n(15)
    sim = server.sim
    # plant a fake neighbor layer from agent 2 in agent 1's and base's grids
    from subterra.voxmap import OccupancyGrid
    src = OccupancyGrid(frame=2, shape=sim.world.shape)
    src.set_self_voxel((3, 3, 3), 8.0)
    patch = src.create_diff()
    sim.agents[0].grid.merge_patch(patch)
    sim.base.grid.merge_patch(patch)
    assert 2 in sim.agents[0].grid.layers
    ack = send_cmd(ws, "reset_map", 1, {"agent": 2})
    assert ack["kind"] == "ack"
    server.step_n(3)
    assert 2 not in sim.agents[0].grid.layers
    assert 2 not in sim.base.grid.layers


def test_artifact_edit_then_submit_scores_edited_position(ws_client):
    server, ws = ws_client
    ws.receive_text()
    sim = server.sim
    sim.scoreboard.auto_submit = False
    truth_type, truth_pos = sim.world.artifacts[0]
    wrong = [float(truth_pos[0] + 7.0), float(truth_pos[1]),
             float(truth_pos[2])]
    sim.scoreboard.ingest({"id": "r0", "agent": 1, "type": truth_type,
                           "position": wrong, "confidence": 0.9})
    assert sim.current_score() == 0 or sim.scoreboard.submitted == []
    ack = send_cmd(ws, "edit", 0, {"id": "r0",
                                   "position": [float(v)
                                                for v in truth_pos]})
    assert ack["kind"] == "ack"
    ack = send_cmd(ws, "submit", 0, {"id": "r0"}, cmd_id="c2")
    assert ack["kind"] == "ack"
    server.step_n(1)
    assert sim.current_score() == 1


def test_malformed_command_error_and_sim_untouched(ws_client):
    server, ws = ws_client
    ws.receive_text()
    before = server.sim.tick_index
    err = send_cmd(ws, "warp", 1)
    assert err["kind"] == "error"
    ws.send_text("this is not json")
    reply = json.loads(ws.receive_text())
    assert reply["kind"] == "error"
    assert server.sim.tick_index == before


def test_unknown_agent_rejected(ws_client):
    server, ws = ws_client
    ws.receive_text()
    err = send_cmd(ws, "estop", 99)
    assert err["kind"] == "error"
    assert "unknown agent" in err["body"]["status"]


def test_read_path_does_not_mutate(server):
    server.step_n(10)
    s1 = build_snapshot(server.sim)
    tick = server.sim.tick_index
    s2 = build_snapshot(server.sim)
    assert server.sim.tick_index == tick
    assert json.dumps(s1, sort_keys=True) == json.dumps(s2, sort_keys=True)


def test_command_to_out_of_comm_agent_pending(ws_client):
    server, ws = ws_client
    ws.receive_text()
    server.step_n(15)
    # teleport agent 2 out of range
    server.sim.agents[1].robot.pose[0] += 500.0
    server.sim.net.set_position(2, server.sim.agents[1].robot.pose[:3])
    server.step_n(12)
    ack = send_cmd(ws, "estop", 2)
    assert ack["kind"] == "ack"
    assert ack["body"]["status"] == "pending delivery"


def test_session_record_replays_headlessly():
    """Recorded console session replays as a supervisor script with an
    identical final score."""
    script = [{"t": 1.5, "op": "estop", "target": 1},
              {"t": 3.0, "op": "resume", "target": 1}]
    server = BridgeServer(scripted_scenario(duration=8.0), speedup=1000)
    server.step_n(14)
    server.apply_command({"op": "estop", "target": 1})
    server.step_n(15)
    server.apply_command({"op": "resume", "target": 1})
    remaining = int(8.0 / 0.1) - server.sim.tick_index
    server.step_n(remaining)
    server.sim.finalize()
    recorded = server.sim.recorded_session()
    assert [c["op"] for c in recorded] == ["estop", "resume"]

    from subterra.sim import Simulation
    sc = scripted_scenario(duration=8.0,
                           script=[{"t": c["t"], "op": c["op"],
                                    "target": c["target"],
                                    "args": c["args"]} for c in recorded])
    sim2 = Simulation(sc)
    sim2.run()
    assert sim2.current_score() == server.sim.current_score()
    assert sim2.coverage() == pytest.approx(server.sim.coverage(),
                                            abs=1e-12)
