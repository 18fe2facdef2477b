"""Trajectory generators for point-to-point, line and arc moves.

Every planner samples a trapezoidal speed profile with a fixed acceleration
ramp (``T_ACC``) at a fixed period (``DT``).  Multi-axis motions share one
normalised profile so all axes start and stop together.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadArgs, LimitError, Unreachable
from .kinematics import fk_matrix, inverse_kinematics, matrix_from_pose
from .rotations import angles_to_matrix, orientation_error, rotvec_to_matrix

DT = 0.005
T_ACC = 0.2
# peak angular speed for orientation changes in Cartesian moves (rad/s)
MAX_ANGULAR_SPEED = 0.5
# how far the start may sit off the commanded circle (mm)
ARC_START_TOL = 1e-6


@dataclass
class JointTrajectory:
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return (len(self.samples) - 1) * self.dt


@dataclass
class CartesianPath:
    dt: float
    positions: np.ndarray
    rotations: np.ndarray

    def __len__(self):
        return len(self.positions)

    @property
    def duration(self):
        return (len(self.positions) - 1) * self.dt

    def transforms(self):
        T = np.tile(np.eye(4), (len(self), 1, 1))
        T[:, :3, :3] = self.rotations
        T[:, :3, 3] = self.positions
        return T


@dataclass
class ArcSpec:
    """Arc description.

    ``variant`` is one of ``"two_frames"`` (``via`` and ``end`` 4x4 or pose),
    ``"center_normal"`` (``center``, ``normal``, ``radius``, ``angle``) or
    ``"xy"``/``"xz"``/``"yz"`` (2-D ``center`` in that plane, ``radius``,
    ``angle``; the out-of-plane coordinate is the start's).
    Plane arcs turn from the first named axis toward the second.
    """

    variant: str
    center: np.ndarray = None
    normal: np.ndarray = None
    radius: float = 0.0
    angle: float = 0.0
    via: np.ndarray = None
    end: np.ndarray = None


PLANE_AXES = {"xy": (0, 1, 2), "xz": (0, 2, 1), "yz": (1, 2, 0)}


def trapezoid_time(distance, v_peak, t_acc=T_ACC):
    """Duration of a rest-to-rest trapezoid whose ramps last ``t_acc``."""
    if distance <= 0:
        return 0.0
    if distance >= v_peak * t_acc:
        return distance / v_peak + t_acc
    # too short to reach cruise: triangle with the same acceleration
    return 2.0 * math.sqrt(distance * t_acc / v_peak)


def trapezoid_fraction(t, distance, v_peak, t_acc=T_ACC):
    """Fraction of ``distance`` covered at times ``t`` (array), clipped to [0, 1]."""
    t = np.asarray(t, dtype=float)
    if distance <= 0:
        return np.ones_like(t)
    acc = v_peak / t_acc
    T = trapezoid_time(distance, v_peak, t_acc)
    if distance >= v_peak * t_acc:
        ramp = t_acc
    else:
        ramp = T / 2.0
    v_top = acc * ramp
    s = np.where(
        t < ramp,
        0.5 * acc * t**2,
        np.where(
            t <= T - ramp,
            0.5 * acc * ramp**2 + v_top * (t - ramp),
            distance - 0.5 * acc * (T - t) ** 2,
        ),
    )
    s = np.where(t >= T, distance, s)
    return np.clip(s / distance, 0.0, 1.0)


def _profile(distance, v_peak, dt, t_acc):
    T = trapezoid_time(distance, v_peak, t_acc)
    n = max(int(math.ceil(T / dt - 1e-9)), 0)
    return trapezoid_fraction(np.arange(n + 1) * dt, distance, v_peak, t_acc)


def _check_override(override):
    if not (isinstance(override, (int, float)) and 0.0 < override <= 1.0):
        raise BadArgs(f"override must be in (0, 1], got {override!r}")


def plan_joint_ptp(start, goal, override, g, dt=DT, t_acc=T_ACC):
    """Synchronised trapezoidal joint move from ``start`` to ``goal``.

    The joint needing the longest time cruises at ``override`` times its
    velocity limit; the others are slowed to finish at the same sample.
    """
    _check_override(override)
    start = g.check_limits(start)
    goal = g.check_limits(goal)
    delta = goal - start
    v = override * g.qd_max
    ratios = np.abs(delta) / v
    lead = int(np.argmax(ratios))
    if ratios[lead] == 0.0:
        return JointTrajectory(dt, start[None, :].copy())
    frac = _profile(abs(delta[lead]), v[lead], dt, t_acc)
    samples = start + frac[:, None] * delta
    samples[0] = start
    samples[-1] = goal
    return JointTrajectory(dt, samples)


def plan_joint_path(points, override, g, start, dt=DT, t_acc=T_ACC):
    """Concatenate PTP segments through ``points`` with rest at every junction."""
    q = g.check_limits(start)
    out = [q[None, :]]
    for p in points:
        seg = plan_joint_ptp(q, p, override, g, dt, t_acc)
        out.append(seg.samples[1:])
        q = seg.samples[-1]
    return JointTrajectory(dt, np.vstack(out))


def _as_transform(pose):
    pose = np.asarray(pose, dtype=float)
    if pose.shape == (4, 4):
        return pose
    return matrix_from_pose(pose)


def _shared_fraction(length, angle, v, dt, t_acc, w_max):
    t_lin = trapezoid_time(length, v, t_acc)
    t_rot = trapezoid_time(angle, w_max, t_acc)
    if t_lin == 0.0 and t_rot == 0.0:
        return np.ones(1)
    if t_lin >= t_rot:
        return _profile(length, v, dt, t_acc)
    return _profile(angle, w_max, dt, t_acc)


def plan_line(start_pose, goal_pose, v, dt=DT, t_acc=T_ACC, w_max=MAX_ANGULAR_SPEED):
    """Straight-line Cartesian path at peak speed ``v`` mm/s.

    Orientation turns about one fixed axis at constant rate, synchronised
    with the translation.
    """
    if not v > 0:
        raise BadArgs(f"linear velocity must be positive, got {v!r}")
    T0, T1 = _as_transform(start_pose), _as_transform(goal_pose)
    p0, p1 = T0[:3, 3], T1[:3, 3]
    R0, R1 = T0[:3, :3], T1[:3, :3]
    rot = orientation_error(R1, R0)
    length = float(np.linalg.norm(p1 - p0))
    angle = float(np.linalg.norm(rot))
    frac = _shared_fraction(length, angle, v, dt, t_acc, w_max)
    positions = p0 + frac[:, None] * (p1 - p0)
    rotations = np.array([rotvec_to_matrix(s * rot) @ R0 for s in frac])
    positions[0], rotations[0] = p0, R0
    positions[-1], rotations[-1] = p1, R1
    return CartesianPath(dt, positions, rotations)


def _circumcircle(p0, p1, p2):
    a, b = p1 - p0, p2 - p0
    n = np.cross(a, b)
    nn = float(n @ n)
    if nn < 1e-12 * max(float(a @ a) * float(b @ b), 1e-300):
        raise BadArgs("arc points are collinear")
    center = p0 + (np.cross(n, a) * float(b @ b) + np.cross(b, n) * float(a @ a)) / (2.0 * nn)
    return center, n / math.sqrt(nn)


def _arc_geometry(T0, spec):
    """Return (center, unit normal, radius, sweep angle, end rotation or None, end position or None)."""
    p0 = T0[:3, 3]
    variant = spec.variant.lower()
    if variant == "two_frames":
        Tv, Te = _as_transform(spec.via), _as_transform(spec.end)
        pv, pe = Tv[:3, 3], Te[:3, 3]
        center, n = _circumcircle(p0, pv, pe)
        r = float(np.linalg.norm(p0 - center))
        u = (p0 - center) / r
        w = np.cross(n, u)
        d = pe - center
        sweep = math.atan2(float(d @ w), float(d @ u)) % (2.0 * math.pi)
        return center, n, r, sweep, Te[:3, :3], pe
    if variant == "center_normal":
        center = np.asarray(spec.center, dtype=float)
        n = np.asarray(spec.normal, dtype=float)
        norm = np.linalg.norm(n)
        if not abs(norm - 1.0) < 1e-6:
            raise BadArgs("arc normal must be a unit vector")
        n = n / norm
    elif variant in PLANE_AXES:
        i, j, k = PLANE_AXES[variant]
        c2 = np.asarray(spec.center, dtype=float).reshape(-1)
        if c2.shape != (2,):
            raise BadArgs("plane arcs take a 2-D center")
        center = np.empty(3)
        center[i], center[j], center[k] = c2[0], c2[1], p0[k]
        n = np.cross(np.eye(3)[i], np.eye(3)[j])
    else:
        raise BadArgs(f"unknown arc variant {spec.variant!r}")
    r = float(spec.radius)
    angle = float(spec.angle)
    if not r > 0:
        raise BadArgs("arc radius must be positive")
    if abs(angle) > 2.0 * math.pi + 1e-12:
        raise BadArgs("arc angle must be within [-2pi, 2pi]")
    offset = p0 - center
    if abs(float(offset @ n)) > ARC_START_TOL or abs(float(np.linalg.norm(offset)) - r) > ARC_START_TOL:
        raise BadArgs("current position does not lie on the commanded circle")
    return center, n, r, angle, None, None


def plan_arc(start_pose, spec, v, dt=DT, t_acc=T_ACC, w_max=MAX_ANGULAR_SPEED):
    """Circular path from the start pose as described by ``spec``."""
    if not v > 0:
        raise BadArgs(f"linear velocity must be positive, got {v!r}")
    T0 = _as_transform(start_pose)
    p0, R0 = T0[:3, 3], T0[:3, :3]
    center, n, r, sweep, R_end, p_end = _arc_geometry(T0, spec)
    u = (p0 - center) / r
    w = np.cross(n, u)
    R1 = R0 if R_end is None else R_end
    rot = orientation_error(R1, R0)
    frac = _shared_fraction(r * abs(sweep), float(np.linalg.norm(rot)), v, dt, t_acc, w_max)
    phi = sweep * frac
    positions = center + r * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * w)
    rotations = np.array([rotvec_to_matrix(s * rot) @ R0 for s in frac])
    positions[0], rotations[0] = p0, R0
    rotations[-1] = R1
    if p_end is not None:
        positions[-1] = p_end
    return CartesianPath(dt, positions, rotations)


def relative_goal_base(T_current, delta):
    """Goal pose for a move expressed in base axes: translate, then rotate about base axes."""
    delta = np.asarray(delta, dtype=float)
    T = np.array(T_current, dtype=float)
    T[:3, 3] = T[:3, 3] + delta[:3]
    T[:3, :3] = angles_to_matrix(*delta[3:]) @ T[:3, :3]
    return T


def relative_goal_eef(T_current, delta):
    """Goal pose for a move expressed in the current flange frame."""
    return np.asarray(T_current, dtype=float) @ matrix_from_pose(delta)


def path_to_joint_trajectory(path, seed, g, velocity_scale=1.0):
    """Resolve a Cartesian path into joint samples by chained IK.

    If the result would exceed a joint velocity limit the sample period is
    stretched uniformly by the smallest factor that restores feasibility.
    """
    q = g.check_limits(seed)
    out = np.empty((len(path), q.size))
    for k, T in enumerate(path.transforms()):
        try:
            q = inverse_kinematics(g, T, q)
        except (Unreachable, LimitError) as exc:
            raise Unreachable(f"sample {k}: {exc}", index=k) from exc
        out[k] = q
    dt = path.dt
    if len(out) > 1:
        speed = np.abs(np.diff(out, axis=0)) / (dt * velocity_scale * g.qd_max)
        factor = float(speed.max())
        if factor > 1.0:
            dt *= factor
    return JointTrajectory(dt, out)


def resample(traj, dt=DT):
    """Linear resampling of a joint trajectory onto a ``dt`` grid; endpoints kept exact."""
    if len(traj) == 1 or math.isclose(traj.dt, dt, rel_tol=0.0, abs_tol=1e-15):
        return JointTrajectory(dt, traj.samples.copy())
    src_t = np.arange(len(traj)) * traj.dt
    n = int(math.ceil(src_t[-1] / dt - 1e-9))
    t = np.minimum(np.arange(n + 1) * dt, src_t[-1])
    out = np.column_stack([np.interp(t, src_t, traj.samples[:, j]) for j in range(traj.samples.shape[1])])
    out[0] = traj.samples[0]
    out[-1] = traj.samples[-1]
    return JointTrajectory(dt, out)


def plan_cartesian(g, q_start, path):
    """Joint trajectory on the ``DT`` grid for a Cartesian path starting at ``q_start``."""
    return resample(path_to_joint_trajectory(path, q_start, g), path.dt)


def fk_trace(g, traj):
    return np.array([fk_matrix(g, q, check=False)[:3, 3] for q in traj.samples])
