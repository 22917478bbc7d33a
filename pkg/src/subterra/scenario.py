"""Scenario files: versioned YAML schema describing the world, the robot
roster, transport parameters, mission policy, and an optional timed
supervisor script for headless replay of console actions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .coordination import MissionConfig
from .frontier import PlannerParams
from .mesh import LinkModel
from .world import DepthCamSpec, DetectorSpec, Lidar3DSpec, NoiseModel, \
    PlanarScanSpec

SCHEMA_VERSION = 1


class ScenarioError(Exception):
    """Raised on malformed scenario files, before any simulation starts."""


@dataclass
class WorldSpec:
    kind: str = "maze"
    seed: int = 0
    dims: tuple[float, float, float] = (30.0, 30.0, 2.4)
    resolution: float = 0.15
    n_artifacts: int = 3
    # optional scripted placements overriding the seeded ones:
    # [{type: drill, position: [x, y, z]}, ...]
    artifacts: tuple = ()


@dataclass
class AgentSpec:
    id: int
    kind: str = "ground"              # ground | quad
    v_max: float = 1.0
    body_radius: float = 0.3
    beacons_carried: int = 0
    sensors: tuple[str, ...] = ("lidar3d",)
    spawn_offset: tuple[float, float] = (0.0, 0.0)


@dataclass
class TimingSpec:
    dt: float = 0.1
    duration: float = 60.0
    sense_every: int = 5              # ticks between scans
    plan_every: int = 25              # ticks between replans
    status_every: int = 10            # 1 Hz at dt = 0.1
    diff_every: int = 100             # 10 s at dt = 0.1
    detect_every: int = 10


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    world: WorldSpec = field(default_factory=WorldSpec)
    agents: list[AgentSpec] = field(default_factory=lambda: [AgentSpec(id=1)])
    base_id: int = 0
    link: LinkModel = field(default_factory=LinkModel)
    mission: MissionConfig = field(default_factory=MissionConfig)
    planner: PlannerParams = field(default_factory=PlannerParams)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)
    timing: TimingSpec = field(default_factory=TimingSpec)
    supervisor_script: list[dict] = field(default_factory=list)
    auto_submit: bool = True

    def validate(self) -> None:
        if self.timing.dt <= 0:
            raise ScenarioError("timing.dt must be positive")
        if self.timing.duration < 0:
            raise ScenarioError("timing.duration must be >= 0")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError("agent ids must be unique")
        if self.base_id in ids:
            raise ScenarioError("base_id collides with an agent id")
        for a in self.agents:
            if a.kind not in ("ground", "quad"):
                raise ScenarioError(f"agent {a.id}: unknown kind {a.kind!r}")
            for s in a.sensors:
                if s not in ("planar_scan", "lidar3d", "depth_cam"):
                    raise ScenarioError(f"agent {a.id}: unknown sensor {s!r}")
        if self.world.kind not in ("tunnel", "warehouse", "maze"):
            raise ScenarioError(f"unknown world kind {self.world.kind!r}")
        if self.mission.policy not in ("greedy", "silent"):
            raise ScenarioError(f"unknown policy {self.mission.policy!r}")
        for cmd in self.supervisor_script:
            if "t" not in cmd or "op" not in cmd:
                raise ScenarioError(f"script entry needs t and op: {cmd}")


def _build(cls, data: dict, where: str):
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - fields
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    coerced = {}
    for k, v in data.items():
        if isinstance(v, list) and not isinstance(
                cls.__dataclass_fields__[k].default, list):
            v = tuple(v)
        coerced[k] = v
    try:
        return cls(**coerced)
    except TypeError as e:
        raise ScenarioError(f"{where}: {e}") from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ScenarioError(f"{path}: invalid YAML: {e}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    return scenario_from_dict(data, str(path))


def scenario_from_dict(data: dict, where: str = "scenario") -> Scenario:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(
            f"{where}: schema_version must be {SCHEMA_VERSION}, got {version}")
    sc = Scenario(name=data.get("name", "scenario"),
                  seed=int(data.get("seed", 0)))
    if "world" in data:
        w = dict(data["world"])
        if "artifacts" in w:
            w["artifacts"] = tuple(
                (a["type"], tuple(a["position"])) for a in w["artifacts"])
        sc.world = _build(WorldSpec, w, "world")
    if "agents" in data:
        sc.agents = [_build(AgentSpec, a, f"agents[{i}]")
                     for i, a in enumerate(data["agents"])]
    sc.base_id = int(data.get("base_id", 0))
    if "link" in data:
        sc.link = _build(LinkModel, data["link"], "link")
    if "mission" in data:
        sc.mission = _build(MissionConfig, data["mission"], "mission")
    if "planner" in data:
        p = dict(data["planner"])
        for key in ("fov_h", "fov_v"):
            if key + "_deg" in p:
                p[key] = math.radians(p.pop(key + "_deg"))
        sc.planner = _build(PlannerParams, p, "planner")
    if "detector" in data:
        sc.detector = _build(DetectorSpec, data["detector"], "detector")
    if "noise" in data:
        sc.noise = _build(NoiseModel, data["noise"], "noise")
    if "timing" in data:
        sc.timing = _build(TimingSpec, data["timing"], "timing")
    sc.supervisor_script = list(data.get("supervisor_script", []))
    sc.auto_submit = bool(data.get("auto_submit", True))
    sc.validate()
    return sc


def dump_scenario(sc: Scenario) -> dict:
    """Round-trippable dict form (used to record console sessions)."""
    from dataclasses import asdict
    world = asdict(sc.world)
    world["artifacts"] = [{"type": t, "position": list(p)}
                          for t, p in sc.world.artifacts]
    if not world["artifacts"]:
        del world["artifacts"]
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "seed": sc.seed,
        "world": world,
        "agents": [asdict(a) for a in sc.agents],
        "base_id": sc.base_id,
        "link": asdict(sc.link),
        "mission": asdict(sc.mission),
        "planner": asdict(sc.planner),
        "detector": asdict(sc.detector),
        "noise": asdict(sc.noise),
        "timing": asdict(sc.timing),
        "supervisor_script": list(sc.supervisor_script),
        "auto_submit": sc.auto_submit,
    }
