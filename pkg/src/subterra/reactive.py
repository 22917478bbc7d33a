"""Reactive controllers: wide-field centering from planar depth scans and
the depth-image potential-field controller for aerial vehicles.

The centering law projects the nearness signal (1/depth) onto sinusoidal
weighting shapes; the integral is evaluated by trapezoidal quadrature over
the scan samples. Positive command follows the scan's angle handedness; the
closed loop applies steer_sign so that the command reduces both lateral and
angular displacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import point_at_arc, project_to_polyline, wrap_angle

STEER_SIGN = -1.0          # scan angles are CCW; positive u steers clockwise
EMERGENCY_STOP_RANGE = 0.3  # m; stand-in for the small-obstacle inhibitor


class HallwayStateError(Exception):
    """Lateral displacement outside the hallway half-width."""


@dataclass
class DepthScan:
    angles: np.ndarray        # rad, monotone over [-pi, pi)
    depths: np.ndarray        # m, in (0, max_range]
    max_range: float


@dataclass
class NearnessSignal:
    angles: np.ndarray
    mu: np.ndarray            # 1/m


@dataclass
class ControlGains:
    k1: float = 1.0           # lateral-displacement steering gain
    k2: float = 1.0           # angular-displacement steering gain
    k_rep: float = 0.5        # repulsive potential gain
    v_x_max: float = 1.0      # m/s
    v_z_max: float = 0.5      # m/s
    v_theta_max: float = 1.0  # rad/s
    u_rep_max: float = 1.0    # repulsive vector magnitude bound
    psi_dot_max: float = 1.0  # rad/s
    k_v: float = 1.5          # vertex-approach proportional steering gain


def analytic_nearness(state, a: float, angles: np.ndarray) -> NearnessSignal:
    """Nearness of an infinite hallway of half-width `a` at relative state
    (dy, dpsi): sin(g+dpsi)/(a+dy) toward the positive-angle wall and
    -sin(g+dpsi)/(a-dy) toward the other."""
    dy, dpsi = float(state[0]), float(state[1])
    if abs(dy) >= a:
        raise HallwayStateError(f"|dy|={abs(dy):.3f} outside half-width {a}")
    angles = np.asarray(angles, dtype=float)
    beta = np.arctan2(np.sin(angles + dpsi), np.cos(angles + dpsi))
    mu = np.where(beta >= 0.0,
                  np.sin(beta) / (a + dy),
                  -np.sin(beta) / (a - dy))
    return NearnessSignal(angles=angles, mu=mu)


def centering_integral(dy: float, dpsi: float, a: float, k1: float,
                       k2: float) -> float:
    """Closed form of the steering projection on the analytic hallway."""
    ap, am = a + dy, a - dy
    return (k1 * math.cos(dpsi) * (math.pi / 2.0) * (1.0 / ap - 1.0 / am)
            + k2 * math.sin(2.0 * dpsi) * (2.0 / 3.0) * (1.0 / ap + 1.0 / am))


class CenteringController:
    """Steering-rate command from a planar depth scan.

    Scans with angular gaps above `max_gap` hold the previous command and
    raise the degraded flag.
    """

    def __init__(self, gains: ControlGains, max_gap: float = math.radians(30)):
        self.gains = gains
        self.max_gap = max_gap
        self.last_u = 0.0
        self.degraded = False

    def command(self, scan: DepthScan) -> float:
        angles = np.asarray(scan.angles, dtype=float)
        depths = np.asarray(scan.depths, dtype=float)
        gaps = np.diff(angles)
        wrap_gap = 2.0 * math.pi - (angles[-1] - angles[0])
        if len(angles) < 8 or gaps.max(initial=0.0) > self.max_gap \
                or wrap_gap > self.max_gap:
            self.degraded = True
            return self.last_u
        self.degraded = False
        mu = 1.0 / np.maximum(depths, 1e-6)
        shape = (self.gains.k1 * np.sin(angles)
                 + self.gains.k2 * np.sin(2.0 * angles))
        # close the wrap segment so the quadrature covers the full circle
        ga = np.append(angles, angles[0] + 2.0 * math.pi)
        integrand = np.append(mu * shape, mu[0] * shape[0])
        trapezoid = getattr(np, "trapezoid", np.trapz)
        u = float(trapezoid(integrand, ga))
        self.last_u = u
        return u


def centering_command(scan: DepthScan, gains: ControlGains) -> float:
    """One-shot form of CenteringController.command."""
    return CenteringController(gains).command(scan)


def emergency_stop(scan: DepthScan,
                   threshold: float = EMERGENCY_STOP_RANGE) -> bool:
    return bool(np.min(scan.depths) < threshold)


def simulate_hallway_centering(gains: ControlGains, a: float, v: float,
                               dy0: float, dpsi0: float, duration: float,
                               dt: float = 0.02, n_samples: int = 360,
                               noise_sigma: float = 0.0, rng=None):
    """Close the loop on the analytic hallway: sample nearness at the
    current state, run the quadrature controller, integrate the planar
    kinematics. Returns the (t, dy, dpsi) trajectory."""
    angles = np.linspace(-math.pi, math.pi, n_samples, endpoint=False)
    ctrl = CenteringController(gains)
    dy, dpsi = dy0, dpsi0
    out = [(0.0, dy, dpsi)]
    steps = int(round(duration / dt))
    for s in range(steps):
        sig = analytic_nearness((dy, dpsi), a, angles)
        depths = 1.0 / np.maximum(np.abs(sig.mu), 1e-9)
        if noise_sigma > 0.0 and rng is not None:
            depths = depths * (1.0 + noise_sigma * rng.standard_normal(
                len(depths)))
        scan = DepthScan(angles=angles, depths=np.maximum(depths, 1e-3),
                         max_range=float(depths.max()))
        u = ctrl.command(scan)
        psi_dot = STEER_SIGN * u
        psi_dot = max(-gains.psi_dot_max, min(gains.psi_dot_max, psi_dot))
        dpsi = wrap_angle(dpsi + psi_dot * dt)
        dy += -v * math.sin(dpsi) * dt
        dy = max(-0.95 * a, min(0.95 * a, dy))
        out.append(((s + 1) * dt, dy, dpsi))
    return np.array(out)


# ---------------------------------------------------------------------------
# aerial potential-field controller
# ---------------------------------------------------------------------------

# camera axes (x right, y down, z optical) expressed in the body frame
# (x forward, y left, z up), per mounting direction
_CAM_TO_BODY = {
    "forward": np.array([[0.0, 0.0, 1.0],
                         [-1.0, 0.0, 0.0],
                         [0.0, -1.0, 0.0]]),
    "up": np.array([[0.0, 1.0, 0.0],
                    [-1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0]]),
    "down": np.array([[0.0, -1.0, 0.0],
                      [-1.0, 0.0, 0.0],
                      [0.0, 0.0, -1.0]]),
}

MAX_REP_PIXELS = (64, 48)


@dataclass
class DepthImage:
    depths: np.ndarray        # (h, w) z-depths, m, in (0, max_range]
    fx: float
    fy: float
    cx: float
    cy: float
    max_range: float
    facing: str = "forward"

    def pixel_dirs_body(self) -> np.ndarray:
        """(h, w, 3) unit direction of every pixel in the body frame."""
        h, w = self.depths.shape
        us, vs = np.meshgrid(np.arange(w), np.arange(h))
        d = np.stack([(us + 0.5 - self.cx) / self.fx,
                      (vs + 0.5 - self.cy) / self.fy,
                      np.ones((h, w))], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ _CAM_TO_BODY[self.facing].T


@dataclass
class UavCommand:
    v_x: float
    v_z: float
    v_theta: float
    u_rep: np.ndarray = field(default_factory=lambda: np.zeros(3))
    u_res: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _subsample(img: DepthImage) -> tuple[np.ndarray, np.ndarray]:
    h, w = img.depths.shape
    si = max(1, int(math.ceil(h / MAX_REP_PIXELS[1])))
    sj = max(1, int(math.ceil(w / MAX_REP_PIXELS[0])))
    return img.depths[::si, ::sj], img.pixel_dirs_body()[::si, ::sj]


def uav_local_command(images: list[DepthImage], lookahead_dir,
                      gains: ControlGains) -> UavCommand:
    """Velocity command from the repulsive pixel sum and the lookahead pull.

    The repulsive sum is normalized by the pixel count so gains are image-
    resolution independent; its magnitude is clamped at u_rep_max before the
    resultant blend.
    """
    u_rep = np.zeros(3)
    n_pix = 0
    for img in images:
        depths, dirs = _subsample(img)
        n_pix += depths.size
        valid = (depths > 0.0) & (depths <= img.max_range)
        if not valid.any():
            continue
        weight = (1.0 / img.max_range) - (1.0 / depths[valid])
        u_rep += gains.k_rep * np.sum(weight[:, None] * dirs[valid], axis=0)
    if n_pix > 0:
        u_rep /= n_pix
    mag = float(np.linalg.norm(u_rep))
    if mag > gains.u_rep_max:
        u_rep *= gains.u_rep_max / mag
        mag = gains.u_rep_max
    frac = mag / gains.u_rep_max
    look = np.asarray(lookahead_dir, dtype=float)
    u_res = (1.0 - frac) * look + u_rep / gains.u_rep_max

    v_x = gains.v_x_max * float(u_res[0])
    v_z = gains.v_z_max * float(u_res[2])
    if abs(u_res[0]) < 1e-12 and abs(u_res[1]) < 1e-12:
        v_theta = 0.0
    else:
        v_theta = gains.v_theta_max * math.atan2(float(u_res[1]),
                                                 float(u_res[0])) / math.pi
    v_x = max(-gains.v_x_max, min(gains.v_x_max, v_x))
    v_z = max(-gains.v_z_max, min(gains.v_z_max, v_z))
    v_theta = max(-gains.v_theta_max, min(gains.v_theta_max, v_theta))
    return UavCommand(v_x=v_x, v_z=v_z, v_theta=v_theta, u_rep=u_rep,
                      u_res=u_res)


def compute_lookahead(path: np.ndarray, x, L: float) -> np.ndarray:
    """Point a fixed arc distance beyond the robot's projection onto the
    path; the path end once the remainder is shorter."""
    path = np.asarray(path, dtype=float)
    if len(path) == 0:
        raise ValueError("path must be nonempty")
    if len(path) == 1:
        return path[0].copy()
    s, _ = project_to_polyline(path, x)
    return point_at_arc(path, s + L)
