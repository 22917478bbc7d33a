"""Ground-truth environments, sensing, vehicle kinematics, artifact
detection, scoring, and localization-error injection.

Worlds are dense voxel grids (True = solid) generated deterministically
from a seed; sensors raycast the truth grid; robots integrate unicycle
kinematics with collision checks against a precomputed clearance field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .coordination import ARTIFACT_TYPES
from .geometry import raycast_batch, raycast_cells
from .reactive import DepthImage, DepthScan

SCORE_RADIUS = 5.0


class WorldGenError(Exception):
    pass


@dataclass
class PlanarScanSpec:
    kind: str = "planar_scan"
    n_rays: int = 360
    max_range: float = 12.0
    height: float = 0.3               # sensor height above robot origin


@dataclass
class Lidar3DSpec:
    kind: str = "lidar3d"
    rings: int = 16
    rays_per_ring: int = 120
    v_fov: float = math.radians(22.5)  # half-angle
    max_range: float = 15.0
    height: float = 0.4


@dataclass
class DepthCamSpec:
    kind: str = "depth_cam"
    width: int = 64
    height_px: int = 48
    fov_h: float = math.radians(43.5)  # half-angle
    fov_v: float = math.radians(29.0)  # half-angle
    max_range: float = 6.0
    facing: str = "forward"
    height: float = 0.0


@dataclass
class NoiseModel:
    odom_drift: float = 0.0           # % per meter traveled
    gate_error_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)  # r, p, y
    depth_sigma: float = 0.0          # m

    @classmethod
    def worst_case_gate(cls) -> "NoiseModel":
        # worst observed inter-robot alignment error preset
        return cls(gate_error_deg=(0.0527, 3.9215, -0.4105))


@dataclass
class RobotModel:
    kind: str = "ground"              # ground | quad
    pose: np.ndarray = field(default_factory=lambda: np.zeros(4))
    v_max: float = 1.0
    omega_max: float = 2.0
    vz_max: float = 0.5
    body_radius: float = 0.3
    height: float = 0.4
    distance_traveled: float = 0.0
    collisions: int = 0


@dataclass
class WorldModel:
    solid: np.ndarray                 # dense bool, True = solid
    resolution: float
    kind: str
    seed: int
    spawns: list[np.ndarray]
    artifacts: list[tuple[str, np.ndarray]]
    junctions: list[np.ndarray] = field(default_factory=list)
    reachable_free: np.ndarray | None = None
    _clearance2d: np.ndarray | None = None
    _clearance3d: np.ndarray | None = None
    _ground_k: int = 0

    @property
    def shape(self):
        return self.solid.shape

    def dims_m(self):
        return tuple(s * self.resolution for s in self.solid.shape)

    def reachable_free_count(self) -> int:
        return int(self.reachable_free.sum())

    def clearance(self, kind: str, position) -> float:
        """Distance from a point to the nearest non-floor solid voxel."""
        r = self.resolution
        i = int(position[0] / r)
        j = int(position[1] / r)
        k = int(position[2] / r)
        nx, ny, nz = self.solid.shape
        i = min(max(i, 0), nx - 1)
        j = min(max(j, 0), ny - 1)
        k = min(max(k, 0), nz - 1)
        if kind == "ground":
            if self._clearance2d is None:
                mid = self._ground_k + max(
                    1, int(0.3 / r))
                slab = self.solid[:, :, mid]
                self._clearance2d = ndimage.distance_transform_edt(
                    ~slab, sampling=r).astype(np.float32)
            return float(self._clearance2d[i, j])
        if self._clearance3d is None:
            obstacles = self.solid.copy()
            obstacles[:, :, :self._ground_k + 1] = False  # floor is not a wall
            self._clearance3d = ndimage.distance_transform_edt(
                ~obstacles, sampling=r).astype(np.float32)
        return float(self._clearance3d[i, j, k])


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_world(kind: str, seed: int, dims, resolution: float = 0.15,
                   n_artifacts: int = 3, corridor_width: float = 2.4
                   ) -> WorldModel:
    """Deterministic world synthesis: tunnel network, cluttered warehouse,
    or perfect maze. `dims` in meters (x, y, z)."""
    rng = np.random.default_rng(seed)
    nx, ny, nz = (max(4, int(round(d / resolution))) for d in dims)
    if kind in ("tunnel", "maze") and min(dims[0], dims[1]) \
            < corridor_width * 2:
        raise WorldGenError("dims too small for the corridor width")
    floor_k = 2
    if kind == "maze":
        solid, spawns, junctions = _gen_maze(rng, nx, ny, nz, floor_k,
                                             resolution)
    elif kind == "tunnel":
        solid, spawns, junctions = _gen_tunnel(rng, nx, ny, nz, floor_k,
                                               resolution, corridor_width)
    elif kind == "warehouse":
        solid, spawns, junctions = _gen_warehouse(rng, nx, ny, nz, floor_k,
                                                  resolution)
    else:
        raise WorldGenError(f"unknown world kind {kind!r}")

    world = WorldModel(solid=solid, resolution=resolution, kind=kind,
                       seed=seed, spawns=spawns, artifacts=[],
                       junctions=junctions, _ground_k=floor_k - 1)
    world.reachable_free = _flood_free(solid, world.spawns[0], resolution)
    _place_artifacts(world, rng, n_artifacts)
    return world


def _seal(solid: np.ndarray, floor_k: int) -> None:
    solid[0, :, :] = True
    solid[-1, :, :] = True
    solid[:, 0, :] = True
    solid[:, -1, :] = True
    solid[:, :, 0:floor_k] = True
    solid[:, :, -1] = True


def _gen_maze(rng, nx, ny, nz, floor_k, res):
    """Recursive-backtracker perfect maze on a coarse cell lattice."""
    pitch_m = 3.0
    wall_m = 0.45
    pitch = max(6, int(round(pitch_m / res)))
    wall = max(2, int(round(wall_m / res)))
    cx = max(2, (nx - wall) // pitch)
    cy = max(2, (ny - wall) // pitch)
    solid = np.ones((nx, ny, nz), dtype=bool)

    def cell_box(ci, cj):
        x0 = wall + ci * pitch
        y0 = wall + cj * pitch
        return x0, y0, x0 + pitch - wall, y0 + pitch - wall

    visited = np.zeros((cx, cy), dtype=bool)
    stack = [(0, 0)]
    visited[0, 0] = True
    opened = []
    while stack:
        ci, cj = stack[-1]
        options = [(ci + d[0], cj + d[1], d) for d in
                   ((1, 0), (-1, 0), (0, 1), (0, -1))
                   if 0 <= ci + d[0] < cx and 0 <= cj + d[1] < cy
                   and not visited[ci + d[0], cj + d[1]]]
        if not options:
            stack.pop()
            continue
        ni, nj, d = options[rng.integers(0, len(options))]
        visited[ni, nj] = True
        opened.append(((ci, cj), (ni, nj)))
        stack.append((ni, nj))

    ceil_k = nz - 1
    for ci in range(cx):
        for cj in range(cy):
            x0, y0, x1, y1 = cell_box(ci, cj)
            solid[x0:x1, y0:y1, floor_k:ceil_k] = False
    for (ci, cj), (ni, nj) in opened:
        x0, y0, x1, y1 = cell_box(ci, cj)
        u0, v0, u1, v1 = cell_box(ni, nj)
        ax0, ay0 = min(x0, u0), min(y0, v0)
        ax1, ay1 = max(x1, u1), max(y1, v1)
        if ci == ni:
            solid[x0:x1, ay0:ay1, floor_k:ceil_k] = False
        else:
            solid[ax0:ax1, y0:y1, floor_k:ceil_k] = False
    _seal(solid, floor_k)
    x0, y0, x1, y1 = cell_box(0, 0)
    spawn = np.array([(x0 + x1) / 2 * res, (y0 + y1) / 2 * res,
                      (floor_k + 2) * res])
    return solid, [spawn], []


def _gen_tunnel(rng, nx, ny, nz, floor_k, res, corridor_width):
    """Random spanning corridors on a lattice with junctions and stubs."""
    node_pitch = max(8.0, corridor_width * 3.0)
    pitch = int(round(node_pitch / res))
    gx = max(2, (nx - 2) // pitch)
    gy = max(2, (ny - 2) // pitch)
    half_w = max(2, int(round(corridor_width / 2 / res)))
    ceil_k = min(nz - 1, floor_k + max(4, int(round(2.7 / res))))
    solid = np.ones((nx, ny, nz), dtype=bool)

    def node_center(gi, gj):
        return (1 + gi * pitch + pitch // 2, 1 + gj * pitch + pitch // 2)

    # random spanning tree over the lattice (randomized Prim)
    in_tree = {(0, 0)}
    edges = []
    frontier = [((0, 0), (1, 0)), ((0, 0), (0, 1))]
    while frontier:
        idx = int(rng.integers(0, len(frontier)))
        a, b = frontier.pop(idx)
        if b in in_tree or not (0 <= b[0] < gx and 0 <= b[1] < gy):
            continue
        in_tree.add(b)
        edges.append((a, b))
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            c = (b[0] + d[0], b[1] + d[1])
            if 0 <= c[0] < gx and 0 <= c[1] < gy and c not in in_tree:
                frontier.append((b, c))
    # a few extra loops
    n_extra = max(1, (gx * gy) // 8)
    for _ in range(n_extra):
        gi = int(rng.integers(0, gx - 1))
        gj = int(rng.integers(0, gy))
        edges.append(((gi, gj), (gi + 1, gj)))

    degree: dict[tuple, int] = {}
    for a, b in edges:
        degree[a] = degree.get(a, 0) + 1
        degree[b] = degree.get(b, 0) + 1
        x0, y0 = node_center(*a)
        x1, y1 = node_center(*b)
        _carve_corridor(solid, x0, y0, x1, y1, half_w, floor_k, ceil_k)
    junctions = [np.array([node_center(*n)[0] * res,
                           node_center(*n)[1] * res, (floor_k + 2) * res])
                 for n, dg in sorted(degree.items()) if dg >= 3]
    _seal(solid, floor_k)
    sx, sy = node_center(0, 0)
    spawn = np.array([sx * res, sy * res, (floor_k + 2) * res])
    return solid, [spawn], junctions


def _carve_corridor(solid, x0, y0, x1, y1, half_w, floor_k, ceil_k):
    nx, ny = solid.shape[0], solid.shape[1]

    def box(cx, cy):
        solid[max(1, cx - half_w):min(nx - 1, cx + half_w + 1),
              max(1, cy - half_w):min(ny - 1, cy + half_w + 1),
              floor_k:ceil_k] = False

    # L-shaped: along x then along y
    for x in range(min(x0, x1), max(x0, x1) + 1):
        box(x, y0)
    for y in range(min(y0, y1), max(y0, y1) + 1):
        box(x1, y)


def _gen_warehouse(rng, nx, ny, nz, floor_k, res):
    """Open hall, clutter columns, and overhead beam obstructions."""
    solid = np.ones((nx, ny, nz), dtype=bool)
    solid[1:nx - 1, 1:ny - 1, floor_k:nz - 1] = False
    area_m2 = (nx * res) * (ny * res)
    n_cols = max(4, int(area_m2 / 60))
    for _ in range(n_cols):
        cx = int(rng.integers(2 + 10, nx - 12))
        cy = int(rng.integers(2 + 10, ny - 12))
        r = int(rng.integers(2, 5))
        solid[cx - r:cx + r, cy - r:cy + r, floor_k:nz - 1] = True
    # overhead beams at ~2/3 height
    beam_k0 = floor_k + int((nz - floor_k) * 0.66)
    n_beams = max(2, int(ny * res / 12))
    for _ in range(n_beams):
        by = int(rng.integers(4, ny - 5))
        solid[1:nx - 1, by:by + 2, beam_k0:beam_k0 + 2] = True
    _seal(solid, floor_k)
    spawn = np.array([8 * res, 8 * res, (floor_k + 2) * res])
    solid[2:int(3.0 / res), 2:int(3.0 / res), floor_k:nz - 1] = False
    return solid, [spawn], []


def _flood_free(solid: np.ndarray, spawn, res) -> np.ndarray:
    free = ~solid
    labels, _ = ndimage.label(free)
    si = tuple(min(max(int(s / res), 0), n - 1)
               for s, n in zip(spawn, solid.shape))
    lab = labels[si]
    if lab == 0:
        raise WorldGenError("spawn is inside solid space")
    return labels == lab


def _place_artifacts(world: WorldModel, rng, n: int,
                     min_separation: float = 8.0) -> None:
    free = np.argwhere(world.reachable_free)
    res = world.resolution
    placed: list[np.ndarray] = []
    guard = 500
    while len(placed) < n and guard > 0:
        guard -= 1
        idx = int(rng.integers(0, len(free)))
        pos = (free[idx] + 0.5) * res
        if any(np.linalg.norm(pos[:2] - p[:2]) < min_separation
               for p in placed):
            continue
        if np.linalg.norm(pos[:2] - world.spawns[0][:2]) < 5.0:
            continue
        placed.append(pos)
    for i, pos in enumerate(placed):
        world.artifacts.append((ARTIFACT_TYPES[i % len(ARTIFACT_TYPES)], pos))


# ---------------------------------------------------------------------------
# sensing
# ---------------------------------------------------------------------------

@dataclass
class Lidar3DScan:
    points_body: np.ndarray           # (n, 3) endpoints in the body frame
    hit_mask: np.ndarray
    max_range: float
    sensor_offset: np.ndarray         # body-frame sensor position
    hit_points_body: np.ndarray | None = None   # hit-voxel centers (n, 3)


def sense(world: WorldModel, robot: RobotModel, spec, noise: NoiseModel,
          rng) -> DepthScan | Lidar3DScan | DepthImage:
    pose = robot.pose
    psi = float(pose[3])
    cp, sp = math.cos(psi), math.sin(psi)

    def body_to_world_dir(d):
        return np.stack([cp * d[:, 0] - sp * d[:, 1],
                         sp * d[:, 0] + cp * d[:, 1],
                         d[:, 2]], axis=1)

    if spec.kind == "planar_scan":
        gammas = np.linspace(-math.pi, math.pi, spec.n_rays, endpoint=False)
        dirs_body = np.stack([np.cos(gammas), np.sin(gammas),
                              np.zeros_like(gammas)], axis=1)
        origin = np.array([pose[0], pose[1], pose[2] + spec.height])
        d = raycast_batch(world.solid, origin, body_to_world_dir(dirs_body),
                          spec.max_range, world.resolution)
        if noise.depth_sigma > 0:
            d = d + noise.depth_sigma * rng.standard_normal(len(d))
        d = np.clip(d, 0.05, spec.max_range)
        return DepthScan(angles=gammas, depths=d, max_range=spec.max_range)

    if spec.kind == "lidar3d":
        elevs = np.linspace(-spec.v_fov, spec.v_fov, spec.rings)
        gammas = np.linspace(-math.pi, math.pi, spec.rays_per_ring,
                             endpoint=False)
        ee, gg = np.meshgrid(elevs, gammas, indexing="ij")
        ee, gg = ee.ravel(), gg.ravel()
        dirs_body = np.stack([np.cos(ee) * np.cos(gg),
                              np.cos(ee) * np.sin(gg), np.sin(ee)], axis=1)
        offset = np.array([0.0, 0.0, spec.height])
        origin = np.array([pose[0], pose[1], pose[2] + spec.height])
        dirs_world = body_to_world_dir(dirs_body)
        d, cells = raycast_cells(world.solid, origin, dirs_world,
                                 spec.max_range, world.resolution)
        hit = (cells[:, 0] >= 0)
        if noise.depth_sigma > 0:
            d = np.clip(d + noise.depth_sigma * rng.standard_normal(len(d)),
                        0.05, spec.max_range)
        pts_body = dirs_body * d[:, None] + offset[None, :]
        # hit-voxel centers in the body frame: occupied updates land there,
        # keeping endpoint voxelization exact (sensor soundness)
        hit_pts = np.zeros_like(pts_body)
        if hit.any():
            centers_w = (cells[hit] + 0.5) * world.resolution
            dw = centers_w - origin[None, :]
            c, s = math.cos(-psi), math.sin(-psi)
            hit_pts[hit] = np.stack(
                [c * dw[:, 0] - s * dw[:, 1],
                 s * dw[:, 0] + c * dw[:, 1], dw[:, 2]],
                axis=1) + offset[None, :]
        return Lidar3DScan(points_body=pts_body, hit_mask=hit,
                           max_range=spec.max_range, sensor_offset=offset,
                           hit_points_body=hit_pts)

    if spec.kind == "depth_cam":
        w, h = spec.width, spec.height_px
        fx = (w / 2.0) / math.tan(spec.fov_h)
        fy = (h / 2.0) / math.tan(spec.fov_v)
        cx_, cy_ = w / 2.0, h / 2.0
        img = DepthImage(depths=np.empty((h, w)), fx=fx, fy=fy, cx=cx_,
                         cy=cy_, max_range=spec.max_range, facing=spec.facing)
        dirs_body = img.pixel_dirs_body().reshape(-1, 3)
        origin = np.array([pose[0], pose[1], pose[2] + spec.height])
        d, cells = raycast_cells(world.solid, origin,
                                 body_to_world_dir(dirs_body),
                                 spec.max_range, world.resolution)
        hit = cells[:, 0] >= 0
        if noise.depth_sigma > 0:
            d = d + noise.depth_sigma * rng.standard_normal(len(d))
        # z-depth along the optical axis = range * cos(angle off axis);
        # the body-frame forward component carries exactly that factor for
        # each facing. No-hit pixels stay pinned at the max-range sentinel.
        axis = {"forward": np.array([1.0, 0, 0]),
                "up": np.array([0, 0, 1.0]),
                "down": np.array([0, 0, -1.0])}[spec.facing]
        cosang = np.clip(dirs_body @ axis, 1e-6, 1.0)
        z = np.clip(d * cosang, 0.01, spec.max_range)
        z[~hit] = spec.max_range
        img.depths = z.reshape(h, w)
        return img

    raise ValueError(f"unknown sensor kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def step_dynamics(robot: RobotModel, command, dt: float, world: WorldModel
                  ) -> list[str]:
    """Unicycle integration with collision freeze. `command` is
    (v, omega, vz); returns the events raised this step."""
    v, omega, vz = (float(c) for c in command)
    events: list[str] = []
    if any(math.isnan(c) or math.isinf(c) for c in (v, omega, vz)):
        return ["estop_nan"]
    v = max(-robot.v_max, min(robot.v_max, v))
    omega = max(-robot.omega_max, min(robot.omega_max, omega))
    vz = max(-robot.vz_max, min(robot.vz_max, vz)) if robot.kind == "quad" \
        else 0.0
    x, y, z, psi = robot.pose
    nx_ = x + v * math.cos(psi) * dt
    ny_ = y + v * math.sin(psi) * dt
    nz_ = z + vz * dt
    npsi = psi + omega * dt
    if npsi > math.pi:
        npsi -= 2 * math.pi
    elif npsi <= -math.pi:
        npsi += 2 * math.pi
    clearance = world.clearance(robot.kind, (nx_, ny_, nz_))
    if clearance < robot.body_radius:
        robot.pose[3] = npsi   # rotation in place stays allowed
        robot.collisions += 1
        return ["collision"]
    robot.distance_traveled += math.hypot(nx_ - x, ny_ - y)
    robot.pose[:] = (nx_, ny_, nz_, npsi)
    return events


# ---------------------------------------------------------------------------
# artifact detection and scoring
# ---------------------------------------------------------------------------

@dataclass
class DetectorSpec:
    range: float = 8.0
    fov_h: float = math.radians(50.0)  # half-angle
    p_true: float = 0.8
    p_false_per_tick: float = 0.0
    position_sigma: float = 0.3


def detect_artifacts(world: WorldModel, robot: RobotModel,
                     detector: DetectorSpec, rng) -> list[dict]:
    """Visible artifacts fire with p_true; false positives appear at random
    visible free voxels with p_false_per_tick."""
    from .geometry import line_of_sight
    out = []
    pose = robot.pose
    origin = np.array([pose[0], pose[1], pose[2] + 0.3])
    for a_type, a_pos in world.artifacts:
        d = a_pos - origin
        dist = float(np.linalg.norm(d))
        if dist > detector.range:
            continue
        bearing = math.atan2(d[1], d[0]) - pose[3]
        bearing = math.atan2(math.sin(bearing), math.cos(bearing))
        if abs(bearing) > detector.fov_h:
            continue
        if not line_of_sight(world.solid, origin, a_pos, world.resolution):
            continue
        if rng.random() < detector.p_true:
            noisy = a_pos + detector.position_sigma * rng.standard_normal(3)
            out.append({"type": a_type, "position": noisy,
                        "confidence": float(rng.uniform(0.5, 1.0))})
    if detector.p_false_per_tick > 0 and rng.random() \
            < detector.p_false_per_tick:
        for _ in range(8):
            gamma = rng.uniform(-detector.fov_h, detector.fov_h)
            r = rng.uniform(1.0, detector.range)
            p = origin + r * np.array([math.cos(pose[3] + gamma),
                                       math.sin(pose[3] + gamma), 0.0])
            idx = tuple(min(max(int(v / world.resolution), 0), n - 1)
                        for v, n in zip(p, world.shape))
            if not world.solid[idx] and line_of_sight(
                    world.solid, origin, p, world.resolution):
                out.append({"type": ARTIFACT_TYPES[
                    int(rng.integers(0, len(ARTIFACT_TYPES)))],
                    "position": p, "confidence": float(rng.uniform(0.5, 0.9))})
                break
    return out


def score(base_reports: list[dict], world: WorldModel) -> int:
    """One point per correct-type report within the scoring radius of a
    not-yet-scored truth artifact."""
    scored = [False] * len(world.artifacts)
    points = 0
    for rep in base_reports:
        pos = np.array(rep["position"], dtype=float)
        for i, (a_type, a_pos) in enumerate(world.artifacts):
            if scored[i] or a_type != rep["type"]:
                continue
            if float(np.linalg.norm(pos - a_pos)) <= SCORE_RADIUS:
                scored[i] = True
                points += 1
                break
    return points


# ---------------------------------------------------------------------------
# localization-error injection
# ---------------------------------------------------------------------------

class PoseErrorModel:
    """Believed pose = gate-alignment rotation applied to the true pose,
    plus optional odometry drift along a fixed per-agent direction."""

    def __init__(self, noise: NoiseModel, agent_seed: int = 0):
        self.noise = noise
        r, p, y = (math.radians(v) for v in noise.gate_error_deg)
        cy, sy = math.cos(y), math.sin(y)
        cp, sp = math.cos(p), math.sin(p)
        cr, sr = math.cos(r), math.sin(r)
        rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        self.rot = rz @ ry @ rx
        self.yaw = y
        rng = np.random.default_rng(agent_seed)
        ang = rng.uniform(0, 2 * math.pi)
        self.drift_dir = np.array([math.cos(ang), math.sin(ang), 0.0])

    def believed(self, true_pose: np.ndarray, distance: float) -> np.ndarray:
        p = self.rot @ np.asarray(true_pose[:3], dtype=float)
        drift = self.noise.odom_drift / 100.0 * distance
        p = p + drift * self.drift_dir
        return np.array([p[0], p[1], p[2], true_pose[3] + self.yaw])
