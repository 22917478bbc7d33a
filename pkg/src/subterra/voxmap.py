"""Probabilistic occupancy grid with per-agent provenance, diff patches,
self-prioritized merging, and the Euclidean distance transform.

The grid keeps one clamped log-odds layer per contributing agent. The value
used for classification is the clamped sum of the layers, which makes merges
commutative across agents, makes removing an agent's layer exact, and keeps
per-agent latest-sequence-wins semantics for out-of-order diff patches.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import carve_rays, pack_keys, unpack_keys

LOG_ODDS_CLAMP = 10.0
# one observation crosses the classification thresholds (logit(0.7) = 0.847)
HIT_UPDATE = 0.9
MISS_UPDATE = -0.9

SNAPSHOT_MAGIC = b"SVXM"
DIFF_MAGIC = b"SVDF"


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class GridConfig:
    resolution: float = 0.15
    p_occ: float = 0.7
    p_free: float = 0.3
    clamp: float = LOG_ODDS_CLAMP
    hit_update: float = HIT_UPDATE
    miss_update: float = MISS_UPDATE
    n_z_ground: float = math.cos(math.radians(25.0))

    @property
    def l_occ(self) -> float:
        return logit(self.p_occ)

    @property
    def l_free(self) -> float:
        return logit(self.p_free)


@dataclass
class DiffPatch:
    """All self-map voxels changed in one closed interval.

    Entries carry absolute log-odds, so re-application and out-of-order
    application are idempotent under latest-sequence-wins.
    """

    agent: int
    seq: int
    keys: np.ndarray          # (n,) int64 packed voxel keys, sorted
    values: np.ndarray        # (n,) float32 absolute log-odds

    def __len__(self) -> int:
        return len(self.keys)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(DIFF_MAGIC)
        buf.write(struct.pack("<iII", self.agent, self.seq, len(self.keys)))
        buf.write(self.keys.astype("<i8").tobytes())
        buf.write(self.values.astype("<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DiffPatch":
        if data[:4] != DIFF_MAGIC:
            raise ValueError("not a diff patch blob")
        agent, seq, n = struct.unpack_from("<iII", data, 4)
        off = 4 + 12
        keys = np.frombuffer(data, dtype="<i8", count=n, offset=off).astype(np.int64)
        off += 8 * n
        values = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float32)
        return cls(agent=agent, seq=seq, keys=keys, values=values)


@dataclass
class DistanceField:
    """Per-voxel Euclidean distance (meters) to the nearest obstacle voxel."""

    dist: np.ndarray          # dense float32, +inf where no obstacle exists
    resolution: float
    exclude_ground: bool
    stale: bool = False

    def at(self, key) -> float:
        i, j, k = key
        if (0 <= i < self.dist.shape[0] and 0 <= j < self.dist.shape[1]
                and 0 <= k < self.dist.shape[2]):
            return float(self.dist[i, j, k])
        return math.inf


class VoxelSet:
    """Set of voxel keys backed by a dense boolean mask."""

    def __init__(self, mask: np.ndarray):
        self.mask = mask

    def __contains__(self, key) -> bool:
        i, j, k = key
        if (0 <= i < self.mask.shape[0] and 0 <= j < self.mask.shape[1]
                and 0 <= k < self.mask.shape[2]):
            return bool(self.mask[i, j, k])
        return False

    def __len__(self) -> int:
        return int(self.mask.sum())

    def keys(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def __iter__(self):
        for ijk in np.argwhere(self.mask):
            yield tuple(int(v) for v in ijk)


@dataclass
class _Layer:
    log_odds: np.ndarray      # float32
    seq: np.ndarray           # int32, -1 = never written


class OccupancyGrid:
    """Dense-backed, key-addressed occupancy grid for one reference agent."""

    def __init__(self, frame: int, shape: tuple[int, int, int],
                 config: GridConfig | None = None):
        self.frame = int(frame)
        self.shape = tuple(int(s) for s in shape)
        self.config = config or GridConfig()
        if self.config.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.self_log = np.zeros(self.shape, dtype=np.float32)
        self.self_changed = np.zeros(self.shape, dtype=bool)
        self.next_seq = 0
        self.layers: dict[int, _Layer] = {}
        self.applied: set[tuple[int, int]] = set()
        self._merged: np.ndarray | None = None
        self.version = 0
        self._cache: dict = {}

    # -- indexing ---------------------------------------------------------

    @property
    def resolution(self) -> float:
        return self.config.resolution

    def world_to_key(self, p) -> tuple[int, int, int]:
        r = self.config.resolution
        return (int(math.floor(p[0] / r)), int(math.floor(p[1] / r)),
                int(math.floor(p[2] / r)))

    def key_to_center(self, key) -> np.ndarray:
        r = self.config.resolution
        return (np.asarray(key, dtype=float) + 0.5) * r

    def in_bounds(self, key) -> bool:
        i, j, k = key
        return (0 <= i < self.shape[0] and 0 <= j < self.shape[1]
                and 0 <= k < self.shape[2])

    # -- classification ---------------------------------------------------

    def merged_log_odds(self) -> np.ndarray:
        if self._merged is None:
            m = self.self_log.copy()
            for layer in self.layers.values():
                m += layer.log_odds
            np.clip(m, -self.config.clamp, self.config.clamp, out=m)
            self._merged = m
        return self._merged

    def occupied_mask(self) -> np.ndarray:
        return self.merged_log_odds() >= self.config.l_occ

    def free_mask(self) -> np.ndarray:
        return self.merged_log_odds() <= self.config.l_free

    def unknown_mask(self) -> np.ndarray:
        m = self.merged_log_odds()
        return (m > self.config.l_free) & (m < self.config.l_occ)

    def classify(self, key) -> str:
        if not self.in_bounds(key):
            return "unknown"
        v = float(self.merged_log_odds()[key])
        if v >= self.config.l_occ:
            return "occupied"
        if v <= self.config.l_free:
            return "free"
        return "unknown"

    def self_seen_mask(self) -> np.ndarray:
        """Voxels classified free or occupied by own sensor data alone."""
        return ((self.self_log >= self.config.l_occ)
                | (self.self_log <= self.config.l_free))

    def _dirty(self) -> None:
        self._merged = None
        self.version += 1
        self._cache.clear()

    # -- sensor integration ----------------------------------------------

    def integrate_scan(self, sensor_pose, hits, max_range: float,
                       hit_mask=None, occupied_points=None
                       ) -> "OccupancyGrid":
        """Carve free space along rays and mark endpoints occupied.

        `sensor_pose` is (x, y, z, ...) in the grid's world frame; `hits` an
        (n, 3) array of ray endpoints. Endpoints beyond max_range are clipped
        to max_range and integrated as free-only rays. `hit_mask` marks rays
        that actually ended on a surface (default: all). When
        `occupied_points` is given, the occupied updates land on those
        points instead of the ray endpoints (the simulator passes hit-voxel
        centers there, keeping endpoint voxelization exact).
        """
        origin = np.asarray(sensor_pose, dtype=np.float64)[:3].copy()
        pts = np.asarray(hits, dtype=np.float64).reshape(-1, 3).copy()
        n = len(pts)
        if n == 0:
            return self
        if hit_mask is None:
            is_hit = np.ones(n, dtype=bool)
        else:
            is_hit = np.asarray(hit_mask, dtype=bool).copy()
        delta = pts - origin[None, :]
        dist = np.linalg.norm(delta, axis=1)
        over = dist > max_range
        if np.any(over):
            scale = max_range / np.maximum(dist[over], 1e-12)
            pts[over] = origin[None, :] + delta[over] * scale[:, None]
            is_hit[over] = False
        if occupied_points is not None:
            carve_rays(self.self_log, self.self_changed, origin, pts,
                       np.zeros(n, dtype=bool), self.config.resolution,
                       self.config.miss_update, self.config.hit_update,
                       self.config.clamp)
            occ_pts = np.asarray(occupied_points,
                                 dtype=np.float64).reshape(-1, 3)
            if len(occ_pts):
                ijk = np.floor(occ_pts / self.config.resolution).astype(int)
                ok = ((ijk >= 0).all(axis=1)
                      & (ijk < np.array(self.shape)).all(axis=1))
                idx = tuple(ijk[ok].T)
                v = np.minimum(self.self_log[idx] + self.config.hit_update,
                               self.config.clamp)
                self.self_log[idx] = v
                self.self_changed[idx] = True
        else:
            carve_rays(self.self_log, self.self_changed, origin, pts, is_hit,
                       self.config.resolution, self.config.miss_update,
                       self.config.hit_update, self.config.clamp)
        self._dirty()
        return self

    def set_self_voxel(self, key, log_odds: float) -> None:
        """Direct self-layer write (tests and scripted scenarios)."""
        v = float(np.clip(log_odds, -self.config.clamp, self.config.clamp))
        self.self_log[key] = v
        self.self_changed[key] = True
        self._dirty()

    # -- diff maps ---------------------------------------------------------

    def create_diff(self, close_interval: bool = True) -> DiffPatch:
        idx = np.argwhere(self.self_changed)
        if len(idx):
            keys = pack_keys(idx)
            order = np.argsort(keys)
            keys = keys[order]
            values = self.self_log[tuple(idx[order].T)].astype(np.float32)
        else:
            keys = np.empty(0, dtype=np.int64)
            values = np.empty(0, dtype=np.float32)
        patch = DiffPatch(agent=self.frame, seq=self.next_seq,
                          keys=keys, values=values)
        if close_interval:
            self.self_changed[:] = False
            self.next_seq += 1
        return patch

    def merge_patch(self, patch: DiffPatch, self_priority: bool = True
                    ) -> "OccupancyGrid":
        if patch.agent == self.frame:
            raise ValueError("cannot merge an agent's own patch into its grid")
        if (patch.agent, patch.seq) in self.applied:
            return self
        self.applied.add((patch.agent, patch.seq))
        if len(patch) == 0:
            return self
        layer = self.layers.get(patch.agent)
        if layer is None:
            layer = _Layer(log_odds=np.zeros(self.shape, dtype=np.float32),
                           seq=np.full(self.shape, -1, dtype=np.int32))
            self.layers[patch.agent] = layer
        ijk = unpack_keys(patch.keys)
        in_b = ((ijk[:, 0] < self.shape[0]) & (ijk[:, 1] < self.shape[1])
                & (ijk[:, 2] < self.shape[2]))
        ijk = ijk[in_b]
        vals = patch.values[in_b]
        idx = tuple(ijk.T)
        newer = patch.seq > layer.seq[idx]
        if self_priority:
            self_vals = self.self_log[idx]
            own_unknown = ((self_vals > self.config.l_free)
                           & (self_vals < self.config.l_occ))
            newer &= own_unknown
        if np.any(newer):
            sel = tuple(ijk[newer].T)
            layer.log_odds[sel] = vals[newer]
            layer.seq[sel] = patch.seq
            self._dirty()
        return self

    def reset_agent_layer(self, agent: int) -> "OccupancyGrid":
        if agent == self.frame:
            raise ValueError("cannot reset the grid's own reference layer")
        if agent in self.layers:
            del self.layers[agent]
            self._dirty()
        return self

    # -- distance transform and traversability -----------------------------

    def ground_mask(self) -> np.ndarray:
        """Occupied voxels whose local plane-fit normal is near vertical,
        extended downward through buried voxels under a ground surface."""
        cached = self._cache.get("ground")
        if cached is not None:
            return cached
        mask = _ground_voxels(self.occupied_mask(), self.config.n_z_ground)
        self._cache["ground"] = mask
        return mask

    def classified_aabb(self, margin: int = 2):
        """Bounding box (lo, hi inclusive) of all classified voxels."""
        seen = self.merged_log_odds() != 0
        idx = np.argwhere(seen)
        if len(idx) == 0:
            return None
        lo = np.maximum(idx.min(axis=0) - margin, 0)
        hi = np.minimum(idx.max(axis=0) + margin,
                        np.array(self.shape) - 1)
        return lo, hi

    def compute_distance_field(self, exclude_ground: bool = False
                               ) -> DistanceField:
        key = ("edt", exclude_ground)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        occ = self.occupied_mask()
        if exclude_ground:
            occ = occ & ~self.ground_mask()
        dist = np.full(self.shape, np.inf, dtype=np.float32)
        box = self.classified_aabb()
        if occ.any() and box is not None:
            lo, hi = box
            crop = tuple(slice(int(l), int(h) + 1) for l, h in zip(lo, hi))
            # all observed voxels live inside the box, so the transform over
            # the crop is exact for every classified voxel
            dist[crop] = ndimage.distance_transform_edt(
                ~occ[crop], sampling=self.resolution).astype(np.float32)
        field = DistanceField(dist=dist, resolution=self.resolution,
                              exclude_ground=exclude_ground)
        self._cache[key] = field
        return field

    def classify_traversable(self, dist_field: DistanceField, vehicle: str,
                             r_safe: float) -> VoxelSet:
        if r_safe <= 0:
            raise ValueError("r_safe must be positive")
        free = self.free_mask()
        if vehicle == "quad":
            mask = free & (dist_field.dist >= r_safe)
        elif vehicle == "ground":
            ground = self.ground_mask()
            below = np.zeros(self.shape, dtype=bool)
            below[:, :, 1:] = ground[:, :, :-1]
            mask = free & below
        else:
            raise ValueError(f"unknown vehicle kind {vehicle!r}")
        return VoxelSet(mask)

    # -- serialization -----------------------------------------------------

    def owner_ids(self) -> list[int]:
        return sorted([self.frame] + list(self.layers.keys()))

    def snapshot_bytes(self) -> bytes:
        """Deterministic snapshot: header + sorted (key, log-odds, owners)."""
        owners = self.owner_ids()
        owner_bit = {a: b for b, a in enumerate(owners)}
        merged = self.merged_log_odds()
        touched = self.self_log != 0
        bits = np.where(touched, 1 << owner_bit[self.frame], 0).astype(np.uint32)
        for agent, layer in self.layers.items():
            has = layer.seq >= 0
            bits |= np.where(has, 1 << owner_bit[agent], 0).astype(np.uint32)
            touched |= has
        idx = np.argwhere(touched)
        keys = pack_keys(idx) if len(idx) else np.empty(0, dtype=np.int64)
        order = np.argsort(keys)
        buf = io.BytesIO()
        buf.write(SNAPSHOT_MAGIC)
        buf.write(struct.pack("<dI", self.config.resolution, self.frame))
        buf.write(struct.pack("<3i", *self.shape))
        buf.write(struct.pack("<I", len(owners)))
        for a in owners:
            buf.write(struct.pack("<i", a))
        buf.write(struct.pack("<Q", len(idx)))
        if len(idx):
            sel = tuple(idx[order].T)
            rec = np.empty(len(idx), dtype=[("key", "<i8"), ("lo", "<f4"),
                                            ("own", "<u4")])
            rec["key"] = keys[order]
            rec["lo"] = merged[sel]
            rec["own"] = bits[sel]
            buf.write(rec.tobytes())
        return buf.getvalue()


# -- standalone ops mirrored as functions (planner-facing API) -------------

def integrate_scan(grid: OccupancyGrid, sensor_pose, hits, max_range,
                   hit_mask=None) -> OccupancyGrid:
    return grid.integrate_scan(sensor_pose, hits, max_range, hit_mask)


def create_diff(grid: OccupancyGrid, close_interval: bool = True) -> DiffPatch:
    return grid.create_diff(close_interval)


def merge_patch(grid: OccupancyGrid, patch: DiffPatch,
                self_priority: bool = True) -> OccupancyGrid:
    return grid.merge_patch(patch, self_priority)


def reset_agent_layer(grid: OccupancyGrid, agent: int) -> OccupancyGrid:
    return grid.reset_agent_layer(agent)


def compute_distance_field(grid: OccupancyGrid, exclude_ground: bool = False
                           ) -> DistanceField:
    return grid.compute_distance_field(exclude_ground)


def classify_traversable(grid: OccupancyGrid, dist_field: DistanceField,
                         vehicle: str, r_safe: float) -> VoxelSet:
    return grid.classify_traversable(dist_field, vehicle, r_safe)


def plane_fit_abs_nz(cells: np.ndarray, support: np.ndarray,
                     offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """|z| of the least-squares plane normal at each cell, fitted over the
    support-mask voxels found at cell+offsets.

    Returns (abs_nz, count); abs_nz is -1 where the fit is degenerate
    (fewer than 3 points or collinear support).
    """
    n_cells = len(cells)
    nz = np.full(n_cells, -1.0)
    counts = np.zeros(n_cells, dtype=np.int32)
    if n_cells == 0:
        return nz, counts
    pos = cells[:, None, :] + offsets[None, :, :]        # (n, m, 3)
    shape = support.shape
    in_b = ((pos[..., 0] >= 0) & (pos[..., 0] < shape[0])
            & (pos[..., 1] >= 0) & (pos[..., 1] < shape[1])
            & (pos[..., 2] >= 0) & (pos[..., 2] < shape[2]))
    clipped = np.clip(pos, 0, np.array(shape) - 1)
    present = support[clipped[..., 0], clipped[..., 1], clipped[..., 2]] & in_b
    w = present.astype(np.float64)                       # (n, m)
    n = w.sum(axis=1)
    counts[:] = n.astype(np.int32)
    ok = n >= 3
    if not ok.any():
        return nz, counts
    off = offsets.astype(np.float64)                     # (m, 3)
    s1 = w @ off                                         # (n, 3)
    mean = s1 / np.maximum(n, 1)[:, None]
    sq = np.einsum("nm,mi,mj->nij", w, off, off)         # (n, 3, 3)
    cov = sq / np.maximum(n, 1)[:, None, None] \
        - mean[:, :, None] * mean[:, None, :]
    vals, vecs = np.linalg.eigh(cov[ok])
    planar = vals[:, 1] > 1e-9
    res = np.where(planar, np.abs(vecs[:, 2, 0]), -1.0)
    nz[np.flatnonzero(ok)] = res
    return nz, counts


_CUBE_OFFSETS = np.array([(di, dj, dk) for di in (-1, 0, 1)
                          for dj in (-1, 0, 1) for dk in (-1, 0, 1)],
                         dtype=np.int64)


def _ground_voxels(occ: np.ndarray, n_z_ground: float) -> np.ndarray:
    """Least-squares plane fit over each surface voxel's 3x3x3 occupied
    neighborhood; ground = |unit normal z| >= threshold. Buried voxels
    directly under a ground voxel are ground too (a floor slab's interior
    must not bound the distance field). Fits with fewer than 3 support
    points are never ground."""
    out = np.zeros(occ.shape, dtype=bool)
    if not occ.any():
        return out
    exposed = np.zeros_like(occ)
    for axis in range(3):
        for sign in (1, -1):
            shifted = np.ones_like(occ)   # out-of-bounds counts as covered
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if sign > 0:
                src[axis] = slice(1, None)
                dst[axis] = slice(None, -1)
            else:
                src[axis] = slice(None, -1)
                dst[axis] = slice(1, None)
            shifted[tuple(dst)] = occ[tuple(src)]
            exposed |= ~shifted
    surface = occ & exposed
    cells = np.argwhere(surface)
    nz, counts = plane_fit_abs_nz(cells, occ, _CUBE_OFFSETS)
    is_ground = (nz >= n_z_ground) & (counts >= 3)
    out[tuple(cells[is_ground].T)] = True
    # extend ground downward through buried occupied voxels
    for k in range(occ.shape[2] - 2, -1, -1):
        out[:, :, k] |= occ[:, :, k] & out[:, :, k + 1] & ~surface[:, :, k]
    return out
