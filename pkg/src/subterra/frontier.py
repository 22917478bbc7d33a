"""Continuous frontier-view planner.

Pipeline: frontier extraction -> normal/contiguity filtering -> greedy
grouping and polar goal-pose sampling -> wavefront cost-to-go (multi-stencil
first-order fast marching over a clearance-derived speed map) -> utility
optimization with a sound early-stopping bound -> gradient path extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import line_of_sight, wrap_angle
from .voxmap import DistanceField, OccupancyGrid, VoxelSet

INF = 1e30


class StartNotTraversable(Exception):
    """Raised when a march is seeded outside the traversable set."""


class PathExtractionError(Exception):
    pass


@dataclass
class PlannerParams:
    r_normal: float = 0.45            # frontier plane-fit radius, m
    n_z_min: float = 0.0              # acceptable |normal z| range
    n_z_max: float = 0.8
    n_c_min: int = 5                  # minimum contiguous cluster size
    r_group: float = 1.5              # greedy grouping radius, m
    fov_h: float = math.pi            # sensor horizontal half-angle, rad
    fov_v: float = math.radians(25.0)  # sensor vertical half-angle, rad
    gain_range: float = 10.0          # sensor range used for FrontierInFoV, m
    range_min: float = 1.0            # pose sampling radius bounds, m
    range_max: float = 4.0
    psi_dot_max: float = 1.0          # turn-in-place rate, rad/s
    m_best: int = 1                   # goals returned (robots in comms)
    dt_horizon: float = 2.0           # receding-horizon stitch time, s
    r_safe: float = 0.45              # quad safety radius, m
    vehicle: str = "ground"
    clearance_e: float = 1.0          # speed map offset e, m
    v_nominal: float = 1.0            # nominal travel speed, m/s
    min_separation: float = 10.0      # spacing of the M best goals, m
    max_attempts: int = 50            # pose samples per group before skipping
    cost_floor: float = 0.1           # s; utility denominator floor


@dataclass
class FrontierGroup:
    members: np.ndarray               # (n, 3) voxel indices
    centroid: np.ndarray              # (3,) world meters


@dataclass
class FrontierSet:
    mask: np.ndarray
    clusters: list[np.ndarray] = field(default_factory=list)
    groups: list[FrontierGroup] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.mask.sum())

    def voxels(self) -> np.ndarray:
        return np.argwhere(self.mask)


@dataclass
class GoalPose:
    position: np.ndarray              # (3,) world meters
    heading: float                    # rad
    group_id: int = -1
    gain: int = 0
    cost: float = math.inf
    utility: float = 0.0
    path: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "position": [round(float(v), 4) for v in self.position],
            "heading": round(float(self.heading), 4),
            "gain": int(self.gain),
            "cost": round(float(self.cost), 4),
            "utility": round(float(self.utility), 4),
            "path": None if self.path is None else
                    [[round(float(v), 3) for v in w] for w in self.path],
        }


@dataclass
class UtilityTable:
    status: str                       # ok | complete | no_candidates | no_path
    best: list[GoalPose] = field(default_factory=list)
    evaluated: list[GoalPose] = field(default_factory=list)
    skipped_groups: int = 0

    def to_dict(self) -> dict:
        return {"status": self.status,
                "goals": [g.to_dict() for g in self.best]}


@dataclass
class SpeedMap:
    speed: np.ndarray                 # dense, values in (0, 1)
    clearance_offset: float
    resolution: float


@dataclass
class SampleResult:
    candidates: list[GoalPose]
    skipped_groups: list[int]


# ---------------------------------------------------------------------------
# frontier extraction and filtering
# ---------------------------------------------------------------------------

def find_frontier(grid: OccupancyGrid) -> FrontierSet:
    """Free voxels with at least one unseen 6-neighbor inside the map box."""
    free = grid.free_mask()
    unknown = grid.unknown_mask()
    near_unseen = np.zeros_like(free)
    for axis in range(3):
        for sign in (1, -1):
            shifted = np.zeros_like(unknown)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if sign > 0:
                src[axis] = slice(1, None)
                dst[axis] = slice(None, -1)
            else:
                src[axis] = slice(None, -1)
                dst[axis] = slice(1, None)
            shifted[tuple(dst)] = unknown[tuple(src)]
            near_unseen |= shifted
    return FrontierSet(mask=free & near_unseen)


def _ball_offsets(r_normal: float, resolution: float) -> np.ndarray:
    rad = max(1, int(math.floor(r_normal / resolution)))
    offs = np.arange(-rad, rad + 1)
    di, dj, dk = np.meshgrid(offs, offs, offs, indexing="ij")
    ball = (di ** 2 + dj ** 2 + dk ** 2) * resolution ** 2 \
        <= r_normal ** 2 + 1e-9
    return np.stack([di[ball], dj[ball], dk[ball]], axis=1).astype(np.int64)


def filter_frontier(fs: FrontierSet, dist_field: DistanceField,
                    params: PlannerParams) -> FrontierSet:
    """Drop voxels with out-of-range plane normals, then clusters that are
    too small; organize survivors into 26-connected clusters."""
    from .voxmap import plane_fit_abs_nz

    res = dist_field.resolution
    cells = np.argwhere(fs.mask)
    keep = fs.mask.copy()
    if len(cells):
        nz, counts = plane_fit_abs_nz(cells, fs.mask,
                                      _ball_offsets(params.r_normal, res))
        # degenerate fits (nz < 0) stay; the contiguity filter judges them
        drop = (nz >= 0.0) & (counts >= 3) \
            & ~((params.n_z_min <= nz) & (nz <= params.n_z_max))
        keep[tuple(cells[drop].T)] = False
    labels, n_lab = ndimage.label(keep, structure=np.ones((3, 3, 3)))
    clusters = []
    out = np.zeros_like(keep)
    for lab in range(1, n_lab + 1):
        members = np.argwhere(labels == lab)
        if len(members) < params.n_c_min:
            continue
        clusters.append(members)
        out[tuple(members.T)] = True
    return FrontierSet(mask=out, clusters=clusters)


# ---------------------------------------------------------------------------
# goal pose sampling
# ---------------------------------------------------------------------------

def sample_goal_poses(fs: FrontierSet, traversable: VoxelSet,
                      grid: OccupancyGrid, params: PlannerParams,
                      rng_seed: int) -> SampleResult:
    """Greedy-group the frontier, then sample one admissible, non-occluded
    view pose per group (uniform polar around the group centroid)."""
    rng = np.random.default_rng(rng_seed)
    res = grid.resolution
    voxels = fs.voxels()
    if len(voxels) == 0:
        return SampleResult([], [])
    order = np.lexsort((voxels[:, 2], voxels[:, 1], voxels[:, 0]))
    voxels = voxels[order]
    centers = (voxels + 0.5) * res
    tree = cKDTree(centers)

    grouped = np.zeros(len(voxels), dtype=bool)
    groups: list[FrontierGroup] = []
    remaining = np.arange(len(voxels))
    while len(remaining):
        pick = int(rng.integers(0, len(remaining)))
        seed_idx = int(remaining[pick])
        near = tree.query_ball_point(centers[seed_idx], params.r_group)
        members = [i for i in sorted(near) if not grouped[i]]
        if seed_idx not in members:
            members.append(seed_idx)
        mem = np.array(members, dtype=int)
        grouped[mem] = True
        groups.append(FrontierGroup(members=voxels[mem],
                                    centroid=centers[mem].mean(axis=0)))
        remaining = remaining[~grouped[remaining]]
    fs.groups = groups

    occ = grid.occupied_mask()
    candidates: list[GoalPose] = []
    skipped: list[int] = []
    elev_max = min(params.fov_v, math.radians(60.0))
    for gi, group in enumerate(groups):
        cg = group.centroid
        placed = False
        for _ in range(params.max_attempts):
            r = float(rng.uniform(params.range_min, params.range_max))
            az = float(rng.uniform(-math.pi, math.pi))
            el = float(rng.uniform(-elev_max, elev_max))
            offset = np.array([math.cos(el) * math.cos(az),
                               math.cos(el) * math.sin(az),
                               math.sin(el)])
            pos = cg + r * offset
            key = grid.world_to_key(pos)
            if key not in traversable:
                key = _snap_to_traversable(traversable.mask, key)
                if key is None:
                    continue
                pos = grid.key_to_center(key)
            if key not in traversable:
                continue
            d = cg - pos
            dist = float(np.linalg.norm(d))
            if not (params.range_min - res <= dist <= params.range_max + res):
                continue
            elev = math.atan2(d[2], math.hypot(d[0], d[1]))
            if abs(elev) > params.fov_v:
                continue
            if not line_of_sight(occ, pos.astype(np.float64),
                                 cg.astype(np.float64), res):
                continue
            heading = math.atan2(d[1], d[0])
            candidates.append(GoalPose(position=pos, heading=heading,
                                       group_id=gi))
            placed = True
            break
        if not placed:
            skipped.append(gi)
    return SampleResult(candidates, skipped)


_SNAP_OFFSETS = None


def _snap_to_traversable(trav: np.ndarray, key, max_r: int = 4
                         ) -> tuple[int, int, int] | None:
    """Nearest traversable voxel within a small ball of `key`; pose
    admissibility constraints are re-checked by the caller after snapping."""
    global _SNAP_OFFSETS
    if _SNAP_OFFSETS is None:
        offs = [(di, dj, dk) for di in range(-max_r, max_r + 1)
                for dj in range(-max_r, max_r + 1)
                for dk in range(-max_r, max_r + 1)]
        offs.sort(key=lambda d: (d[0] ** 2 + d[1] ** 2 + d[2] ** 2, d))
        _SNAP_OFFSETS = offs
    i, j, k = key
    for di, dj, dk in _SNAP_OFFSETS:
        a, b, c = i + di, j + dj, k + dk
        if 0 <= a < trav.shape[0] and 0 <= b < trav.shape[1] \
                and 0 <= c < trav.shape[2] and trav[a, b, c]:
            return (a, b, c)
    return None


# ---------------------------------------------------------------------------
# speed map and fast marching
# ---------------------------------------------------------------------------

def compute_speed_map(dist_field: DistanceField, e: float) -> SpeedMap:
    speed = 0.5 * (np.tanh(np.minimum(dist_field.dist, 50.0) - e) + 1.0)
    return SpeedMap(speed=speed.astype(np.float64), clearance_offset=e,
                    resolution=dist_field.resolution)


@njit(cache=True)
def _sift_up(heap_t, heap_i, pos):
    while pos > 0:
        parent = (pos - 1) // 2
        if heap_t[parent] > heap_t[pos]:
            heap_t[parent], heap_t[pos] = heap_t[pos], heap_t[parent]
            heap_i[parent], heap_i[pos] = heap_i[pos], heap_i[parent]
            pos = parent
        else:
            break


@njit(cache=True)
def _sift_down(heap_t, heap_i, size, pos):
    while True:
        lo = 2 * pos + 1
        hi = lo + 1
        smallest = pos
        if lo < size and heap_t[lo] < heap_t[smallest]:
            smallest = lo
        if hi < size and heap_t[hi] < heap_t[smallest]:
            smallest = hi
        if smallest == pos:
            return
        heap_t[smallest], heap_t[pos] = heap_t[pos], heap_t[smallest]
        heap_i[smallest], heap_i[pos] = heap_i[pos], heap_i[smallest]
        pos = smallest


@njit(cache=True)
def _heap_push(heap_t, heap_i, size, t, idx, T, state):
    if size >= len(heap_t) - 1:
        # compact stale entries (lazy deletion overflow)
        ny = T.shape[1]
        nz = T.shape[2]
        w = 0
        for r in range(size):
            fi = heap_i[r]
            i = fi // (ny * nz)
            j = (fi // nz) % ny
            k = fi % nz
            if state[i, j, k] == 1 and heap_t[r] <= T[i, j, k] + 1e-12:
                heap_t[w] = heap_t[r]
                heap_i[w] = fi
                w += 1
        size = w
        for p in range(size // 2 - 1, -1, -1):
            _sift_down(heap_t, heap_i, size, p)
    heap_t[size] = t
    heap_i[size] = idx
    _sift_up(heap_t, heap_i, size)
    return size + 1


@njit(cache=True)
def _solve3(u1, u2, u3, h1, h2, h3, f):
    """Upwind quadratic sum((t-u_i)/h_i)^2 = f^2 over one orthogonal stencil."""
    # insertion sort of (u, h) pairs by u
    a1, a2, a3 = u1, u2, u3
    b1, b2, b3 = h1, h2, h3
    if a1 > a2:
        a1, a2 = a2, a1
        b1, b2 = b2, b1
    if a2 > a3:
        a2, a3 = a3, a2
        b2, b3 = b3, b2
    if a1 > a2:
        a1, a2 = a2, a1
        b1, b2 = b2, b1
    if a1 >= INF:
        return INF
    t = a1 + f * b1
    if a2 >= INF or t <= a2:
        return t
    qa = 1.0 / (b1 * b1) + 1.0 / (b2 * b2)
    qb = -2.0 * (a1 / (b1 * b1) + a2 / (b2 * b2))
    qc = (a1 * a1) / (b1 * b1) + (a2 * a2) / (b2 * b2) - f * f
    disc = qb * qb - 4.0 * qa * qc
    if disc >= 0.0:
        t = (-qb + math.sqrt(disc)) / (2.0 * qa)
    if a3 >= INF or t <= a3:
        return t
    qa += 1.0 / (b3 * b3)
    qb -= 2.0 * a3 / (b3 * b3)
    qc += (a3 * a3) / (b3 * b3)
    disc = qb * qb - 4.0 * qa * qc
    if disc >= 0.0:
        t2 = (-qb + math.sqrt(disc)) / (2.0 * qa)
        if t2 >= a3:
            t = t2
    return t


@njit(cache=True)
def _acc(T, state, i, j, k):
    nx, ny, nz = T.shape
    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
        return INF
    if state[i, j, k] == 2:
        return T[i, j, k]
    return INF


@njit(cache=True)
def _candidate(T, state, i, j, k, h, f):
    """Best arrival time at (i,j,k) over the axis stencil and the three
    45-degree rotated plane stencils (multi-stencil first-order solve)."""
    ux = min(_acc(T, state, i - 1, j, k), _acc(T, state, i + 1, j, k))
    uy = min(_acc(T, state, i, j - 1, k), _acc(T, state, i, j + 1, k))
    uz = min(_acc(T, state, i, j, k - 1), _acc(T, state, i, j, k + 1))
    best = _solve3(ux, uy, uz, h, h, h, f)

    s = h * math.sqrt(2.0)
    # xy plane diagonals + z axis
    d1 = min(_acc(T, state, i + 1, j + 1, k), _acc(T, state, i - 1, j - 1, k))
    d2 = min(_acc(T, state, i + 1, j - 1, k), _acc(T, state, i - 1, j + 1, k))
    c = _solve3(d1, d2, uz, s, s, h, f)
    if c < best:
        best = c
    # xz plane diagonals + y axis
    d1 = min(_acc(T, state, i + 1, j, k + 1), _acc(T, state, i - 1, j, k - 1))
    d2 = min(_acc(T, state, i + 1, j, k - 1), _acc(T, state, i - 1, j, k + 1))
    c = _solve3(d1, d2, uy, s, s, h, f)
    if c < best:
        best = c
    # yz plane diagonals + x axis
    d1 = min(_acc(T, state, i, j + 1, k + 1), _acc(T, state, i, j - 1, k - 1))
    d2 = min(_acc(T, state, i, j + 1, k - 1), _acc(T, state, i, j - 1, k + 1))
    c = _solve3(d1, d2, ux, s, s, h, f)
    if c < best:
        best = c
    return best


@njit(cache=True)
def _fmm_run(T, state, heap_t, heap_i, heap_size, speed, trav, h, v_scale,
             targets, t_stop, single_step):
    """March until a target pops, t_stop is crossed, or the heap drains.

    Returns (heap_size, last_flat_index, code): code 0 = done (heap empty),
    1 = target accepted, 2 = t_stop crossed (entry pushed back), 3 = one
    step done (single_step mode).
    """
    nx, ny, nz = T.shape
    while True:
        # pop a valid entry
        while True:
            if heap_size == 0:
                return heap_size, -1, 0
            t = heap_t[0]
            fi = heap_i[0]
            heap_size -= 1
            heap_t[0] = heap_t[heap_size]
            heap_i[0] = heap_i[heap_size]
            _sift_down(heap_t, heap_i, heap_size, 0)
            i = fi // (ny * nz)
            j = (fi // nz) % ny
            k = fi % nz
            if state[i, j, k] == 2:
                continue
            if t > T[i, j, k] + 1e-12:
                continue
            break
        if t > t_stop:
            heap_size = _heap_push(heap_t, heap_i, heap_size, t, fi, T, state)
            return heap_size, fi, 2
        state[i, j, k] = 2
        # relax every neighbor that could use this node in a stencil
        for di in range(-1, 2):
            for dj in range(-1, 2):
                for dk in range(-1, 2):
                    if di == 0 and dj == 0 and dk == 0:
                        continue
                    ni = i + di
                    nj = j + dj
                    nk = k + dk
                    if ni < 0 or nj < 0 or nk < 0 or ni >= nx or nj >= ny \
                            or nk >= nz:
                        continue
                    if state[ni, nj, nk] == 2 or not trav[ni, nj, nk]:
                        continue
                    sp = speed[ni, nj, nk] * v_scale
                    if sp < 1e-9:
                        continue
                    f = 1.0 / sp
                    cand = _candidate(T, state, ni, nj, nk, h, f)
                    if cand < T[ni, nj, nk] - 1e-12:
                        T[ni, nj, nk] = cand
                        state[ni, nj, nk] = 1
                        nfi = (ni * ny + nj) * nz + nk
                        heap_size = _heap_push(heap_t, heap_i, heap_size,
                                               cand, nfi, T, state)
        if targets[i, j, k]:
            return heap_size, fi, 1
        if single_step:
            return heap_size, fi, 3


class FastMarcher:
    """Resumable fast-marching solve of |grad T| * S = 1 over a voxel set."""

    def __init__(self, speed: np.ndarray, traversable: np.ndarray,
                 resolution: float, start_key, v_scale: float = 1.0):
        i, j, k = start_key
        if not traversable[i, j, k]:
            raise StartNotTraversable(
                f"start voxel {tuple(start_key)} is not traversable")
        self.shape = speed.shape
        self.resolution = float(resolution)
        self.v_scale = float(v_scale)
        self.speed = np.ascontiguousarray(speed, dtype=np.float64)
        self.trav = np.ascontiguousarray(traversable, dtype=bool)
        self.T = np.full(self.shape, INF, dtype=np.float64)
        self.state = np.zeros(self.shape, dtype=np.uint8)
        cap = max(1024, min(self.trav.sum() * 4, 4_000_000))
        self.heap_t = np.empty(int(cap), dtype=np.float64)
        self.heap_i = np.empty(int(cap), dtype=np.int64)
        self.heap_size = 0
        ny, nz = self.shape[1], self.shape[2]
        # analytic initialization over a small source ball removes the
        # first-order singularity at the point source
        for di in range(-2, 3):
            for dj in range(-2, 3):
                for dk in range(-2, 3):
                    d = math.sqrt(di * di + dj * dj + dk * dk)
                    if d > 2.0 + 1e-9:
                        continue
                    a, b, c = i + di, j + dj, k + dk
                    if not (0 <= a < self.shape[0] and 0 <= b < self.shape[1]
                            and 0 <= c < self.shape[2]):
                        continue
                    if not self.trav[a, b, c]:
                        continue
                    sp = self.speed[a, b, c] * self.v_scale
                    if sp < 1e-9:
                        continue
                    t = d * self.resolution / sp
                    if t < self.T[a, b, c]:
                        self.T[a, b, c] = t
                        self.state[a, b, c] = 1
                        self.heap_size = _heap_push(
                            self.heap_t, self.heap_i, self.heap_size, t,
                            (a * ny + b) * nz + c, self.T, self.state)
        self._no_targets = np.zeros(self.shape, dtype=bool)
        self.done = False
        self.last_t = 0.0

    def _flat_to_key(self, fi: int):
        ny, nz = self.shape[1], self.shape[2]
        return (fi // (ny * nz), (fi // nz) % ny, fi % nz)

    def march(self, targets: np.ndarray | None = None, t_stop: float = INF,
              single_step: bool = False):
        """Advance the wavefront. Returns (key, code): code 0 done, 1 target
        accepted, 2 stopped at t_stop, 3 single step accepted."""
        if self.done:
            return None, 0
        tg = self._no_targets if targets is None else targets
        self.heap_size, fi, code = _fmm_run(
            self.T, self.state, self.heap_t, self.heap_i, self.heap_size,
            self.speed, self.trav, self.resolution, self.v_scale, tg,
            t_stop, single_step)
        if code == 0:
            self.done = True
            return None, 0
        key = self._flat_to_key(int(fi))
        if code != 2:
            self.last_t = float(self.T[key])
        return key, code

    def arrival(self, key) -> float:
        v = float(self.T[tuple(key)])
        return math.inf if v >= INF else v


def fast_marching(speed: SpeedMap, traversable: VoxelSet, start,
                  stop_condition=None, v_scale: float = 1.0) -> np.ndarray:
    """Arrival-time field from `start` over the traversable set.

    `stop_condition(key, t)` is checked after each accepted voxel; marching
    halts when it returns True. Returns the T array (meters/speed units);
    unreached voxels hold +inf.
    """
    marcher = FastMarcher(speed.speed, traversable.mask, speed.resolution,
                          start, v_scale)
    if stop_condition is None:
        marcher.march()
    else:
        while True:
            key, code = marcher.march(single_step=True)
            if code == 0:
                break
            if stop_condition(key, marcher.arrival(key)):
                break
    T = marcher.T.copy()
    T[T >= INF] = np.inf
    return T


# ---------------------------------------------------------------------------
# path extraction
# ---------------------------------------------------------------------------

_SOBEL_1 = np.array([1.0, 2.0, 1.0])
_SOBEL_D = np.array([-1.0, 0.0, 1.0])


def _sobel_gradient(T: np.ndarray, key) -> np.ndarray | None:
    """3D Sobel gradient of T on the 26-voxel neighborhood of `key`."""
    i, j, k = key
    if (i < 1 or j < 1 or k < 1 or i > T.shape[0] - 2 or j > T.shape[1] - 2
            or k > T.shape[2] - 2):
        return None
    w = T[i - 1:i + 2, j - 1:j + 2, k - 1:k + 2]
    finite = np.isfinite(w) & (w < INF)
    if not finite[1, 1, 1]:
        return None
    if not finite.all():
        wmax = w[finite].max()
        w = np.where(finite, w, wmax)
    g = np.empty(3)
    g[0] = np.einsum("ijk,i,j,k->", w, _SOBEL_D, _SOBEL_1, _SOBEL_1)
    g[1] = np.einsum("ijk,i,j,k->", w, _SOBEL_1, _SOBEL_D, _SOBEL_1)
    g[2] = np.einsum("ijk,i,j,k->", w, _SOBEL_1, _SOBEL_1, _SOBEL_D)
    n = np.linalg.norm(g)
    return None if n < 1e-12 else g / n


def extract_path(T: np.ndarray, goal_key, start_key, resolution: float
                 ) -> np.ndarray:
    """Descend T from goal to start; returns (n, 3) world waypoints ordered
    start -> goal, adjacent steps within one voxel.

    The step choice minimizes the local cost-to-come (T at the neighbor plus
    the step's own travel), with the Sobel gradient direction breaking
    near-ties so paths stay smooth along the medial axis.
    """
    goal_key = tuple(int(v) for v in goal_key)
    start_key = tuple(int(v) for v in start_key)
    if not np.isfinite(T[goal_key]) or T[goal_key] >= INF:
        raise PathExtractionError("goal voxel was not reached by the wavefront")
    cur = goal_key
    prev = None
    was_flat = False
    chain = [cur]
    guard = T.size
    while cur != start_key and T[cur] > 0.0:
        guard -= 1
        if guard <= 0:
            raise PathExtractionError("descent failed to terminate")
        grad = _sobel_gradient(T, cur)
        candidates = []                # (local cost, step unit, neighbor)
        flat_best = None               # plateau fallback
        i, j, k = cur
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                for dk in (-1, 0, 1):
                    if di == 0 and dj == 0 and dk == 0:
                        continue
                    n = (i + di, j + dj, k + dk)
                    if not (0 <= n[0] < T.shape[0] and 0 <= n[1] < T.shape[1]
                            and 0 <= n[2] < T.shape[2]):
                        continue
                    tn = T[n]
                    if tn >= INF:
                        continue
                    if tn >= T[cur] - 1e-12:
                        if (tn <= T[cur] + 1e-12 and n != prev
                                and (flat_best is None or tn < T[flat_best])):
                            flat_best = n
                        continue
                    d = math.sqrt(di * di + dj * dj + dk * dk)
                    # local cost rate implied by the T drop itself
                    rate = (T[cur] - tn) / d
                    candidates.append((tn, d, (di, dj, dk), n, rate))
        if not candidates:
            # gradient stagnation: one sideways step along the plateau,
            # then the descent must resume or extraction fails
            if not was_flat and flat_best is not None and flat_best != prev:
                prev = cur
                cur = flat_best
                was_flat = True
                chain.append(cur)
                continue
            raise PathExtractionError(f"gradient stagnation at {cur}")
        # cost-to-come through each neighbor, using the steepest observed
        # drop rate as the local travel rate
        max_rate = max(c[4] for c in candidates)
        scored = [(tn + d * max_rate, step, n)
                  for tn, d, step, n, _ in candidates]
        best_cost = min(s[0] for s in scored)
        tol = 0.26 * max_rate          # quarter-step slack for smoothing
        admissible = [s for s in scored if s[0] <= best_cost + tol]
        if grad is not None and len(admissible) > 1:
            def align(entry):
                step = np.array(entry[1], dtype=float)
                return float(-grad @ (step / np.linalg.norm(step)))
            best = max(admissible, key=align)[2]
        else:
            best = min(admissible, key=lambda s: s[0])[2]
        prev = cur
        cur = best
        was_flat = False
        chain.append(cur)
    chain.reverse()
    return (np.array(chain, dtype=float) + 0.5) * resolution


def path_headings(path: np.ndarray) -> tuple[float, float]:
    """(initial, final) segment headings; zero for degenerate paths."""
    if len(path) < 2:
        return 0.0, 0.0
    d0 = path[1] - path[0]
    df = path[-1] - path[-2]
    h0 = math.atan2(d0[1], d0[0]) if (abs(d0[0]) + abs(d0[1])) > 1e-12 else 0.0
    hf = math.atan2(df[1], df[0]) if (abs(df[0]) + abs(df[1])) > 1e-12 else 0.0
    return h0, hf


# ---------------------------------------------------------------------------
# utility evaluation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _count_visible(occ, origin, targets, resolution):
    n = 0
    for r in range(targets.shape[0]):
        if line_of_sight(occ, origin, targets[r], resolution):
            n += 1
    return n


def frontier_in_fov(grid: OccupancyGrid, fs: FrontierSet, pose: GoalPose,
                    params: PlannerParams) -> int:
    """Number of frontier voxels inside the sensor FoV at `pose` with an
    unobstructed line of sight."""
    vox = fs.voxels()
    if len(vox) == 0:
        return 0
    centers = (vox + 0.5) * grid.resolution
    d = centers - pose.position[None, :]
    dist = np.linalg.norm(d, axis=1)
    horiz = np.hypot(d[:, 0], d[:, 1])
    az = np.arctan2(d[:, 1], d[:, 0]) - pose.heading
    az = np.arctan2(np.sin(az), np.cos(az))
    el = np.arctan2(d[:, 2], np.maximum(horiz, 1e-9))
    sel = ((dist <= params.gain_range) & (np.abs(az) <= params.fov_h)
           & (np.abs(el) <= params.fov_v))
    if not sel.any():
        return 0
    return int(_count_visible(grid.occupied_mask(),
                              pose.position.astype(np.float64),
                              centers[sel].astype(np.float64),
                              grid.resolution))


def evaluate_utilities(candidates: list[GoalPose], grid: OccupancyGrid,
                       speed: SpeedMap, traversable: VoxelSet, x,
                       params: PlannerParams, fs: FrontierSet,
                       exhaustive: bool = False) -> UtilityTable:
    """March the wavefront from the robot voxel, evaluating candidate goal
    poses as they are reached; stop when no unevaluated pose can beat the
    current best (or march to every candidate when `exhaustive`)."""
    if not candidates:
        return UtilityTable(status="no_candidates")
    start = _seed_voxel(traversable.mask, grid.world_to_key(x))
    if start is None:
        return UtilityTable(status="no_path")
    psi_x = float(x[3]) if len(x) > 3 else 0.0

    for c in candidates:
        c.gain = frontier_in_fov(grid, fs, c, params)

    by_voxel: dict[tuple, list[GoalPose]] = {}
    targets = np.zeros(grid.shape, dtype=bool)
    for c in candidates:
        key = grid.world_to_key(c.position)
        if key not in traversable:
            snapped = _snap_to_traversable(traversable.mask, key)
            key = snapped if snapped is not None else key
        by_voxel.setdefault(key, []).append(c)
        if grid.in_bounds(key):
            targets[key] = True

    marcher = FastMarcher(speed.speed, traversable.mask, grid.resolution,
                          start, params.v_nominal)
    evaluated: list[GoalPose] = []
    pending = {k: list(v) for k, v in by_voxel.items()}
    best_utility = -1.0

    def remaining_max_gain() -> int:
        g = 0
        for lst in pending.values():
            for c in lst:
                g = max(g, c.gain)
        return g

    while pending:
        key, code = marcher.march(targets=targets)
        if code == 0:
            break  # wavefront exhausted; the rest are unreachable
        if key in pending:
            t_arr = marcher.arrival(key)
            for c in pending.pop(key):
                try:
                    path = extract_path(marcher.T, key, start,
                                        grid.resolution)
                except PathExtractionError:
                    continue
                h0, hf = path_headings(path)
                heading_cost = (abs(wrap_angle(psi_x - h0))
                                + abs(wrap_angle(c.heading - hf))
                                ) / params.psi_dot_max
                c.cost = max(t_arr + heading_cost, params.cost_floor)
                c.utility = c.gain / c.cost
                c.path = path
                evaluated.append(c)
                best_utility = max(best_utility, c.utility)
            targets[key] = False
        if not exhaustive and pending:
            bound = remaining_max_gain() / max(marcher.last_t,
                                               params.cost_floor)
            if best_utility >= bound:
                break

    if not evaluated:
        return UtilityTable(status="no_path")
    evaluated.sort(key=lambda c: (-c.utility, c.cost))
    best: list[GoalPose] = []
    for c in evaluated:
        if len(best) >= params.m_best:
            break
        if all(np.linalg.norm(c.position - b.position)
               >= params.min_separation for b in best):
            best.append(c)
    if not best:
        best = [evaluated[0]]
    return UtilityTable(status="ok", best=best, evaluated=evaluated)


def _seed_voxel(trav: np.ndarray, key) -> tuple[int, int, int] | None:
    """`key` if traversable, else the nearest traversable voxel."""
    i, j, k = key
    shape = trav.shape
    i = min(max(i, 0), shape[0] - 1)
    j = min(max(j, 0), shape[1] - 1)
    k = min(max(k, 0), shape[2] - 1)
    if trav[i, j, k]:
        return (i, j, k)
    cells = np.argwhere(trav)
    if len(cells) == 0:
        return None
    d = np.sum((cells - np.array([i, j, k])) ** 2, axis=1)
    return tuple(int(v) for v in cells[int(np.argmin(d))])


# ---------------------------------------------------------------------------
# top-level planning and receding-horizon stitching
# ---------------------------------------------------------------------------

def plan(grid: OccupancyGrid, x, params: PlannerParams, rng_seed: int = 0,
         blacklist: list[tuple[np.ndarray, float]] | None = None,
         exhaustive: bool = False,
         extra_candidates: list[GoalPose] | None = None) -> UtilityTable:
    """Full frontier-view planning pass from robot pose `x`.

    Returns a UtilityTable whose status distinguishes a completed
    exploration (no frontier) from a planning failure (no reachable pose).
    `extra_candidates` (e.g. the currently held goal) are re-evaluated
    alongside the sampled poses.
    """
    dist_field = grid.compute_distance_field(
        exclude_ground=(params.vehicle == "ground"))
    traversable = grid.classify_traversable(dist_field, params.vehicle,
                                            params.r_safe)
    fs = find_frontier(grid)
    fs = filter_frontier(fs, dist_field, params)
    if len(fs) == 0:
        return UtilityTable(status="complete")
    sample = sample_goal_poses(fs, traversable, grid, params, rng_seed)
    candidates = sample.candidates
    if extra_candidates:
        candidates = candidates + [
            GoalPose(position=np.asarray(c.position, dtype=float),
                     heading=float(c.heading)) for c in extra_candidates]
    if blacklist:
        candidates = [c for c in candidates
                      if not any(np.linalg.norm(c.position - ctr) < rad
                                 for ctr, rad in blacklist)]
    if not candidates:
        table = UtilityTable(status="no_candidates")
        table.skipped_groups = len(sample.skipped_groups)
        return table
    speed = compute_speed_map(dist_field, params.clearance_e)
    table = evaluate_utilities(candidates, grid, speed, traversable, x,
                               params, fs, exhaustive=exhaustive)
    table.skipped_groups = len(sample.skipped_groups)
    return table


def stitch_receding_horizon(prev_path: np.ndarray, planner_fn, x,
                            u: float, dt_horizon: float) -> np.ndarray:
    """Plan from the pose the robot will occupy in dt_horizon and splice the
    new path onto the tail of the previous one.

    `planner_fn(point) -> path or None` runs the global planner seeded at
    the stitch point.
    """
    from .geometry import point_at_arc, polyline_length, project_to_polyline, \
        slice_by_arc

    prev_path = np.asarray(prev_path, dtype=float)
    if len(prev_path) == 0:
        raise ValueError("prev_path must be nonempty")
    s0, _ = project_to_polyline(prev_path, x)
    horizon = u * dt_horizon
    total = polyline_length(prev_path)
    s_rh = min(s0 + horizon, total)
    x_rh = point_at_arc(prev_path, s_rh)
    new_path = planner_fn(x_rh)
    if new_path is None or len(new_path) == 0:
        return slice_by_arc(prev_path, max(0.0, s_rh - 2 * horizon), total)
    tail = slice_by_arc(prev_path, max(0.0, s_rh - 2 * horizon), s_rh)
    new_path = np.asarray(new_path, dtype=float)
    if np.linalg.norm(tail[-1] - new_path[0]) < 1e-9:
        stitched = np.vstack([tail, new_path[1:]])
    else:
        stitched = np.vstack([tail, new_path])
    return stitched
