"""Forward/inverse kinematics and Jacobians for a 7-joint serial arm.

All lengths exposed here are millimetres and all angles radians.  Robot
dimensions come from a :class:`RobotGeometry`, normally loaded from a TOML or
JSON file (see ``data/iiwa7_r800.toml`` for the schema).
"""

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import BadArgs, LimitError, Unreachable
from .rotations import angles_to_matrix, matrix_to_angles, orientation_error

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

N_JOINTS = 7
DEFAULT_GEOMETRY = "iiwa7_r800.toml"

# IK settings
IK_TOL_POS = 0.1  # mm, acceptance tolerance
IK_TOL_ORI = 1e-4  # rad
IK_DAMPING = 1e-6  # lambda^2
IK_ANGULAR_SCALE = 1000.0  # rad -> mm-equivalent
IK_MAX_ITER = 200
IK_MAX_STEP = 0.2  # rad per iteration
# iterate until this tight before stopping early
_IK_TIGHT_POS = 1e-7
_IK_TIGHT_ORI = 1e-10


@dataclass
class RobotGeometry:
    """Modified-DH description of the arm.

    ``dh`` rows are ``(a, alpha, d, theta_offset)`` with ``a`` and ``alpha``
    belonging to the link before the joint (Craig convention).
    """

    dh: np.ndarray
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    q_min: np.ndarray = None
    q_max: np.ndarray = None
    qd_max: np.ndarray = None
    home: np.ndarray = None
    transport: np.ndarray = None
    torque_offset: np.ndarray = None
    name: str = "robot"

    def __post_init__(self):
        self.dh = np.asarray(self.dh, dtype=float)
        if self.dh.shape != (N_JOINTS, 4):
            raise ValueError(f"expected {N_JOINTS} DH rows of 4 values, got shape {self.dh.shape}")
        self.tool = np.asarray(self.tool, dtype=float)
        inf = np.full(N_JOINTS, np.pi)
        self.q_max = inf.copy() if self.q_max is None else np.asarray(self.q_max, dtype=float)
        self.q_min = -self.q_max if self.q_min is None else np.asarray(self.q_min, dtype=float)
        if np.any(self.q_max - self.q_min <= 0):
            raise ValueError("joint limit widths must be strictly positive")
        self.qd_max = np.ones(N_JOINTS) if self.qd_max is None else np.asarray(self.qd_max, dtype=float)
        if np.any(self.qd_max <= 0):
            raise ValueError("joint velocity limits must be positive")
        zeros = np.zeros(N_JOINTS)
        self.home = zeros.copy() if self.home is None else np.asarray(self.home, dtype=float)
        self.transport = zeros.copy() if self.transport is None else np.asarray(self.transport, dtype=float)
        if self.torque_offset is None:
            self.torque_offset = zeros.copy()
        self.torque_offset = np.asarray(self.torque_offset, dtype=float)

    def within_limits(self, q, tol=0.0):
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))

    def check_limits(self, q):
        q = as_joint_vector(q)
        if not self.within_limits(q):
            bad = np.flatnonzero((q < self.q_min) | (q > self.q_max))
            raise LimitError(f"joints {[int(i) + 1 for i in bad]} outside limits")
        return q

    def clamp(self, q):
        return np.clip(q, self.q_min, self.q_max)


def as_joint_vector(q):
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape != (N_JOINTS,):
        raise BadArgs(f"expected {N_JOINTS} joint values, got {q.size}")
    if not np.all(np.isfinite(q)):
        raise BadArgs("joint values must be finite")
    return q


def _geometry_from_dict(cfg):
    rows = cfg["joint"]
    if len(rows) != N_JOINTS:
        raise ValueError(f"expected {N_JOINTS} [[joint]] rows, got {len(rows)}")
    dh = [
        [r.get("a_mm", 0.0), np.radians(r.get("alpha_deg", 0.0)), r.get("d_mm", 0.0), np.radians(r.get("offset_deg", 0.0))]
        for r in rows
    ]
    q_max = np.radians([r.get("max_deg", r.get("limit_deg", 180.0)) for r in rows])
    q_min = np.radians([r.get("min_deg", -r.get("limit_deg", 180.0)) for r in rows])
    qd_max = np.radians([r["velocity_deg_s"] for r in rows])

    tool_cfg = cfg.get("tool", {})
    tool = np.eye(4)
    tool[:3, :3] = angles_to_matrix(*np.radians(tool_cfg.get("angles_deg", [0.0, 0.0, 0.0])))
    tool[:3, 3] = tool_cfg.get("translation_mm", [0.0, 0.0, 0.0])

    poses = cfg.get("poses", {})
    return RobotGeometry(
        dh=dh,
        tool=tool,
        q_min=q_min,
        q_max=q_max,
        qd_max=qd_max,
        home=np.radians(poses.get("home_deg", [0.0] * N_JOINTS)),
        transport=np.radians(poses.get("transport_deg", [0.0] * N_JOINTS)),
        torque_offset=cfg.get("torque", {}).get("offset_nm"),
        name=cfg.get("name", "robot"),
    )


def load_geometry(path=None):
    """Load a geometry file (``.toml`` or ``.json``); ``None`` gives the default arm."""
    if path is None:
        text = resources.files("kstsim.data").joinpath(DEFAULT_GEOMETRY).read_text()
        return _geometry_from_dict(tomllib.loads(text))
    path = Path(path)
    text = path.read_text()
    cfg = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    return _geometry_from_dict(cfg)


_DEFAULT = None


def default_geometry():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_geometry()
    return _DEFAULT


def dh_transform(a, alpha, d, theta):
    """Modified DH link transform Rx(alpha) Tx(a) Rz(theta) Tz(d)."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array(
        [
            [ct, -st, 0.0, a],
            [st * ca, ct * ca, -sa, -d * sa],
            [st * sa, ct * sa, ca, d * ca],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def joint_frames(g, q):
    """Base-frame transforms of every joint frame, plus the flange last."""
    frames = []
    T = np.eye(4)
    for (a, alpha, d, off), qi in zip(g.dh, q):
        T = T @ dh_transform(a, alpha, d, qi + off)
        frames.append(T)
    frames.append(T @ g.tool)
    return frames


def fk_matrix(g, q, check=True):
    q = g.check_limits(q) if check else as_joint_vector(q)
    return joint_frames(g, q)[-1]


def pose_from_matrix(T):
    """4x4 transform -> ``[x, y, z, alpha, beta, gamma]``."""
    return np.concatenate((T[:3, 3], matrix_to_angles(T[:3, :3])))


def matrix_from_pose(pose):
    pose = np.asarray(pose, dtype=float).reshape(-1)
    if pose.shape != (6,):
        raise BadArgs(f"expected 6 pose values, got {pose.size}")
    if not np.all(np.isfinite(pose)):
        raise BadArgs("pose values must be finite")
    T = np.eye(4)
    T[:3, :3] = angles_to_matrix(*pose[3:])
    T[:3, 3] = pose[:3]
    return T


def forward_kinematics(g, q, check=True):
    """Flange pose and full transform: ``(pose, T)``."""
    T = fk_matrix(g, q, check=check)
    return pose_from_matrix(T), T


def _jacobian_from_frames(frames):
    p_e = frames[-1][:3, 3]
    J = np.empty((6, N_JOINTS))
    for i in range(N_JOINTS):
        z = frames[i][:3, 2]
        J[:3, i] = np.cross(z, p_e - frames[i][:3, 3])
        J[3:, i] = z
    return J


def jacobian(g, q, check=True):
    """Geometric Jacobian in the base frame: rows 0-2 mm/rad, rows 3-5 rad/rad."""
    q = g.check_limits(q) if check else as_joint_vector(q)
    return _jacobian_from_frames(joint_frames(g, q))


def external_torques(g, q, wrench, check=True):
    """Joint torques (N m) balancing a base-frame wrench at the flange origin.

    ``wrench`` is ``[fx, fy, fz, mx, my, mz]`` in N and N m.
    """
    w = np.asarray(wrench, dtype=float).reshape(-1)
    if w.shape != (6,):
        raise BadArgs("wrench needs 6 components")
    J = jacobian(g, q, check=check)
    # lever arms are in mm; torques must come out in N m
    return (J[:3].T @ w[:3]) * 1e-3 + J[3:].T @ w[3:]


def _pose_error(T_target, T):
    e = np.empty(6)
    e[:3] = T_target[:3, 3] - T[:3, 3]
    e[3:] = orientation_error(T_target[:3, :3], T[:3, :3])
    return e


def _dls_solve(g, T_target, q, max_iter, clamp):
    """Damped least squares iterations; returns (q, converged, pos_err, ori_err)."""
    scale = np.array([1.0, 1.0, 1.0, IK_ANGULAR_SCALE, IK_ANGULAR_SCALE, IK_ANGULAR_SCALE])
    eye6 = IK_DAMPING * np.eye(6)
    best = None
    for _ in range(max_iter + 1):
        frames = joint_frames(g, q)
        e = _pose_error(T_target, frames[-1])
        pos_err = np.linalg.norm(e[:3])
        ori_err = np.linalg.norm(e[3:])
        if best is None or pos_err + IK_ANGULAR_SCALE * ori_err < best[0]:
            best = (pos_err + IK_ANGULAR_SCALE * ori_err, q.copy(), pos_err, ori_err)
        if pos_err < _IK_TIGHT_POS and ori_err < _IK_TIGHT_ORI:
            break
        J = _jacobian_from_frames(frames) * scale[:, None]
        es = e * scale
        dq = J.T @ np.linalg.solve(J @ J.T + eye6, es)
        peak = np.max(np.abs(dq))
        if peak > IK_MAX_STEP:
            dq *= IK_MAX_STEP / peak
        q = q + dq
        if clamp:
            q = g.clamp(q)
    _, q, pos_err, ori_err = best
    return q, pos_err <= IK_TOL_POS and ori_err <= IK_TOL_ORI, pos_err, ori_err


def ik_step(g, target, q):
    """One clamped damped-least-squares update toward ``target`` (used for streaming)."""
    T_target = np.asarray(target, dtype=float)
    if T_target.shape != (4, 4):
        T_target = matrix_from_pose(target)
    q_new, _, _, _ = _dls_solve(g, T_target, g.check_limits(q).copy(), 1, clamp=True)
    return q_new


def inverse_kinematics(g, target, seed, max_iter=IK_MAX_ITER):
    """Joint vector reaching ``target`` (pose or 4x4), starting from ``seed``.

    Raises :class:`Unreachable` when the solver does not close on the target
    and :class:`LimitError` when a solution exists only outside the limits.
    """
    seed = g.check_limits(seed)
    T_target = np.asarray(target, dtype=float)
    if T_target.shape != (4, 4):
        T_target = matrix_from_pose(target)
    q, ok, pos_err, ori_err = _dls_solve(g, T_target, seed.copy(), max_iter, clamp=True)
    if ok:
        return q
    q_free, ok_free, _, _ = _dls_solve(g, T_target, seed.copy(), max_iter, clamp=False)
    if ok_free and not g.within_limits(q_free):
        raise LimitError("target reachable only outside joint limits")
    raise Unreachable(f"IK did not converge (position error {pos_err:.3g} mm, orientation error {ori_err:.3g} rad)")
