"""Shared geometry helpers: angle wrapping, voxel indexing, ray traversal.

The ray kernels are numba-compiled because they sit on the hot path of both
sensor simulation and map integration (hundreds of rays per scan, thousands
of scans per run).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def heading_between(p0, p1) -> float:
    """Heading of the segment p0 -> p1 projected on the xy plane."""
    return math.atan2(p1[1] - p0[1], p1[0] - p0[0])


def pack_key(i: int, j: int, k: int) -> int:
    """Pack non-negative voxel indices into one 64-bit code (21 bits/axis)."""
    return (int(i) << 42) | (int(j) << 21) | int(k)


def unpack_key(code: int):
    return ((code >> 42) & 0x1FFFFF, (code >> 21) & 0x1FFFFF, code & 0x1FFFFF)


def pack_keys(ijk: np.ndarray) -> np.ndarray:
    """Vectorized pack of an (n, 3) int array into (n,) int64 codes."""
    ijk = np.asarray(ijk, dtype=np.int64)
    return (ijk[:, 0] << 42) | (ijk[:, 1] << 21) | ijk[:, 2]


def unpack_keys(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    out = np.empty((len(codes), 3), dtype=np.int64)
    out[:, 0] = (codes >> 42) & 0x1FFFFF
    out[:, 1] = (codes >> 21) & 0x1FFFFF
    out[:, 2] = codes & 0x1FFFFF
    return out


@njit(cache=True)
def ray_through_grid(occ, ox, oy, oz, dx, dy, dz, max_range, resolution):
    """March one ray through a dense boolean grid (Amanatides-Woo DDA).

    Returns the hit distance, or max_range if nothing solid was met before
    max_range or the grid boundary. (ox..oz) in world meters with the grid
    origin at (0,0,0); (dx..dz) must be a unit vector.
    """
    nx, ny, nz = occ.shape
    i = int(math.floor(ox / resolution))
    j = int(math.floor(oy / resolution))
    k = int(math.floor(oz / resolution))
    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
        return max_range

    step_i = 1 if dx > 0 else -1
    step_j = 1 if dy > 0 else -1
    step_k = 1 if dz > 0 else -1

    big = 1e30
    if dx != 0.0:
        t_delta_x = abs(resolution / dx)
        next_x = (i + (1 if dx > 0 else 0)) * resolution
        t_max_x = (next_x - ox) / dx
    else:
        t_delta_x = big
        t_max_x = big
    if dy != 0.0:
        t_delta_y = abs(resolution / dy)
        next_y = (j + (1 if dy > 0 else 0)) * resolution
        t_max_y = (next_y - oy) / dy
    else:
        t_delta_y = big
        t_max_y = big
    if dz != 0.0:
        t_delta_z = abs(resolution / dz)
        next_z = (k + (1 if dz > 0 else 0)) * resolution
        t_max_z = (next_z - oz) / dz
    else:
        t_delta_z = big
        t_max_z = big

    t = 0.0
    while t <= max_range:
        if occ[i, j, k]:
            return t if t > 0.0 else 1e-6
        if t_max_x < t_max_y:
            if t_max_x < t_max_z:
                t = t_max_x
                t_max_x += t_delta_x
                i += step_i
                if i < 0 or i >= nx:
                    return max_range
            else:
                t = t_max_z
                t_max_z += t_delta_z
                k += step_k
                if k < 0 or k >= nz:
                    return max_range
        else:
            if t_max_y < t_max_z:
                t = t_max_y
                t_max_y += t_delta_y
                j += step_j
                if j < 0 or j >= ny:
                    return max_range
            else:
                t = t_max_z
                t_max_z += t_delta_z
                k += step_k
                if k < 0 or k >= nz:
                    return max_range
    return max_range


@njit(cache=True)
def raycast_batch(occ, origin, dirs, max_range, resolution):
    """Distances for a batch of unit direction rays from one origin."""
    n = dirs.shape[0]
    out = np.empty(n, dtype=np.float64)
    for r in range(n):
        out[r] = ray_through_grid(
            occ, origin[0], origin[1], origin[2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2], max_range, resolution)
    return out


@njit(cache=True)
def _ray_hit_cell(occ, ox, oy, oz, dx, dy, dz, max_range, resolution):
    """DDA that reports (distance, i, j, k) of the solid voxel hit; indices
    are -1 when the ray reaches max_range or exits the grid."""
    nx, ny, nz = occ.shape
    i = int(math.floor(ox / resolution))
    j = int(math.floor(oy / resolution))
    k = int(math.floor(oz / resolution))
    if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
        return max_range, -1, -1, -1
    step_i = 1 if dx > 0 else -1
    step_j = 1 if dy > 0 else -1
    step_k = 1 if dz > 0 else -1
    big = 1e30
    if dx != 0.0:
        t_delta_x = abs(resolution / dx)
        t_max_x = ((i + (1 if dx > 0 else 0)) * resolution - ox) / dx
    else:
        t_delta_x = big
        t_max_x = big
    if dy != 0.0:
        t_delta_y = abs(resolution / dy)
        t_max_y = ((j + (1 if dy > 0 else 0)) * resolution - oy) / dy
    else:
        t_delta_y = big
        t_max_y = big
    if dz != 0.0:
        t_delta_z = abs(resolution / dz)
        t_max_z = ((k + (1 if dz > 0 else 0)) * resolution - oz) / dz
    else:
        t_delta_z = big
        t_max_z = big
    t = 0.0
    while t <= max_range:
        if occ[i, j, k]:
            return (t if t > 0.0 else 1e-6), i, j, k
        if t_max_x < t_max_y:
            if t_max_x < t_max_z:
                t = t_max_x
                t_max_x += t_delta_x
                i += step_i
                if i < 0 or i >= nx:
                    return max_range, -1, -1, -1
            else:
                t = t_max_z
                t_max_z += t_delta_z
                k += step_k
                if k < 0 or k >= nz:
                    return max_range, -1, -1, -1
        else:
            if t_max_y < t_max_z:
                t = t_max_y
                t_max_y += t_delta_y
                j += step_j
                if j < 0 or j >= ny:
                    return max_range, -1, -1, -1
            else:
                t = t_max_z
                t_max_z += t_delta_z
                k += step_k
                if k < 0 or k >= nz:
                    return max_range, -1, -1, -1
    return max_range, -1, -1, -1


@njit(cache=True)
def raycast_cells(occ, origin, dirs, max_range, resolution):
    """Like raycast_batch but also reports the solid voxel each ray hit
    (-1 indices for rays that reached max_range). Map integration uses the
    hit-voxel centers so boundary rounding can never claim a free voxel."""
    n = dirs.shape[0]
    dists = np.empty(n, dtype=np.float64)
    cells = np.full((n, 3), -1, dtype=np.int64)
    for r in range(n):
        d, i, j, k = _ray_hit_cell(occ, origin[0], origin[1], origin[2],
                                   dirs[r, 0], dirs[r, 1], dirs[r, 2],
                                   max_range, resolution)
        dists[r] = d
        cells[r, 0] = i
        cells[r, 1] = j
        cells[r, 2] = k
    return dists, cells


@njit(cache=True)
def line_of_sight(occ, p0, p1, resolution):
    """True when the open segment p0 -> p1 crosses no solid voxel.

    The end voxel itself does not block (a target sitting inside/adjacent to
    an occupied voxel is still visible from outside).
    """
    ex = p1[0] - p0[0]
    ey = p1[1] - p0[1]
    ez = p1[2] - p0[2]
    dist = math.sqrt(ex * ex + ey * ey + ez * ez)
    if dist < 1e-9:
        return True
    d = ray_through_grid(occ, p0[0], p0[1], p0[2],
                         ex / dist, ey / dist, ez / dist, dist, resolution)
    return d >= dist - resolution


@njit(cache=True)
def carve_rays(log_odds, changed, origin, pts, is_hit, resolution,
               miss_update, hit_update, clamp):
    """Integrate one scan into a dense log-odds grid.

    Every voxel crossed by a ray gets the free-space decrement; the terminal
    voxel of rays flagged as hits gets the occupied increment. Out-of-grid
    segments are skipped. `changed` is a running mask of touched voxels for
    the pending diff interval.
    """
    nx, ny, nz = log_odds.shape
    n = pts.shape[0]
    for r in range(n):
        ex = pts[r, 0] - origin[0]
        ey = pts[r, 1] - origin[1]
        ez = pts[r, 2] - origin[2]
        dist = math.sqrt(ex * ex + ey * ey + ez * ez)
        if dist < 1e-9:
            continue
        ux = ex / dist
        uy = ey / dist
        uz = ez / dist

        i = int(math.floor(origin[0] / resolution))
        j = int(math.floor(origin[1] / resolution))
        k = int(math.floor(origin[2] / resolution))
        ei = int(math.floor(pts[r, 0] / resolution))
        ej = int(math.floor(pts[r, 1] / resolution))
        ek = int(math.floor(pts[r, 2] / resolution))

        step_i = 1 if ux > 0 else -1
        step_j = 1 if uy > 0 else -1
        step_k = 1 if uz > 0 else -1
        big = 1e30
        if ux != 0.0:
            t_delta_x = abs(resolution / ux)
            t_max_x = ((i + (1 if ux > 0 else 0)) * resolution - origin[0]) / ux
        else:
            t_delta_x = big
            t_max_x = big
        if uy != 0.0:
            t_delta_y = abs(resolution / uy)
            t_max_y = ((j + (1 if uy > 0 else 0)) * resolution - origin[1]) / uy
        else:
            t_delta_y = big
            t_max_y = big
        if uz != 0.0:
            t_delta_z = abs(resolution / uz)
            t_max_z = ((k + (1 if uz > 0 else 0)) * resolution - origin[2]) / uz
        else:
            t_delta_z = big
            t_max_z = big

        t = 0.0
        while t < dist:
            at_end = (i == ei and j == ej and k == ek)
            if 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
                if at_end:
                    if is_hit[r]:
                        v = log_odds[i, j, k] + hit_update
                        if v > clamp:
                            v = clamp
                        if v != log_odds[i, j, k]:
                            log_odds[i, j, k] = v
                            changed[i, j, k] = True
                else:
                    v = log_odds[i, j, k] + miss_update
                    if v < -clamp:
                        v = -clamp
                    if v != log_odds[i, j, k]:
                        log_odds[i, j, k] = v
                        changed[i, j, k] = True
            if at_end:
                break
            if t_max_x < t_max_y:
                if t_max_x < t_max_z:
                    t = t_max_x
                    t_max_x += t_delta_x
                    i += step_i
                else:
                    t = t_max_z
                    t_max_z += t_delta_z
                    k += step_k
            else:
                if t_max_y < t_max_z:
                    t = t_max_y
                    t_max_y += t_delta_y
                    j += step_j
                else:
                    t = t_max_z
                    t_max_z += t_delta_z
                    k += step_k


def project_to_polyline(path: np.ndarray, point) -> tuple[float, np.ndarray]:
    """Project a point onto a polyline.

    Returns (arc length at the projection, projected point). `path` is an
    (n, 3) array of waypoints.
    """
    p = np.asarray(point, dtype=float)[:3]
    best_d2 = math.inf
    best_s = 0.0
    best_pt = path[0].copy()
    s_acc = 0.0
    for a in range(len(path) - 1):
        seg = path[a + 1] - path[a]
        seg_len = float(np.linalg.norm(seg))
        if seg_len < 1e-12:
            continue
        t = float(np.dot(p - path[a], seg) / (seg_len * seg_len))
        t = min(1.0, max(0.0, t))
        q = path[a] + t * seg
        d2 = float(np.sum((p - q) ** 2))
        if d2 < best_d2:
            best_d2 = d2
            best_s = s_acc + t * seg_len
            best_pt = q
        s_acc += seg_len
    if len(path) == 1:
        return 0.0, best_pt
    return best_s, best_pt


def point_at_arc(path: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length s along a polyline, clamped to [0, length]."""
    if s <= 0.0 or len(path) == 1:
        return path[0].copy()
    acc = 0.0
    for a in range(len(path) - 1):
        seg = path[a + 1] - path[a]
        seg_len = float(np.linalg.norm(seg))
        if seg_len < 1e-12:
            continue
        if acc + seg_len >= s:
            t = (s - acc) / seg_len
            return path[a] + t * seg
        acc += seg_len
    return path[-1].copy()


def polyline_length(path: np.ndarray) -> float:
    if len(path) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))


def slice_by_arc(path: np.ndarray, s0: float, s1: float) -> np.ndarray:
    """Sub-polyline between arc lengths s0 <= s1 (endpoints interpolated)."""
    s0 = max(0.0, s0)
    pts = [point_at_arc(path, s0)]
    acc = 0.0
    for a in range(len(path) - 1):
        seg_len = float(np.linalg.norm(path[a + 1] - path[a]))
        if acc + seg_len > s0 and acc + seg_len < s1:
            pts.append(path[a + 1].copy())
        acc += seg_len
    pts.append(point_at_arc(path, s1))
    return np.array(pts)
