"""Rotation representations used at the API boundary.

Poses carry fixed-axis angles ``(alpha, beta, gamma)`` meaning
``R = Rz(alpha) @ Ry(beta) @ Rx(gamma)``: gamma about base X first, then
beta about base Y, then alpha about base Z (the KUKA A-B-C convention).
Quaternions are ``(w, x, y, z)`` with ``w >= 0``.
"""

import numpy as np

# |cos(beta)| below this is treated as the beta = +-pi/2 singularity
GIMBAL_EPS = 1e-9


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def angles_to_matrix(alpha, beta, gamma):
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    return np.array(
        [
            [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
            [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
            [-sb, cb * sg, cb * cg],
        ]
    )


def matrix_to_angles(R, return_degenerate=False):
    """Inverse of :func:`angles_to_matrix`.

    At the representation singularity (``|beta| = pi/2``) gamma is set to 0
    and alpha absorbs the free angle; ``return_degenerate=True`` additionally
    returns a flag telling whether that happened.
    """
    R = np.asarray(R, dtype=float)
    cb = np.hypot(R[0, 0], R[1, 0])
    beta = np.arctan2(-R[2, 0], cb)
    degenerate = cb < GIMBAL_EPS
    if degenerate:
        alpha = np.arctan2(-R[0, 1], R[1, 1])
        gamma = 0.0
    else:
        alpha = np.arctan2(R[1, 0], R[0, 0])
        gamma = np.arctan2(R[2, 1], R[2, 2])
    angles = (float(alpha), float(beta), float(gamma))
    if return_degenerate:
        return angles, bool(degenerate)
    return angles


def quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    # Shepperd: branch on the largest of w, x, y, z to avoid cancellation
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def matrix_to_rotvec(R):
    """Axis-angle vector (angle in [0, pi]) of a rotation matrix."""
    w, x, y, z = matrix_to_quat(R)
    v = np.array([x, y, z])
    s = np.linalg.norm(v)
    if s < 1e-300:
        return np.zeros(3)
    angle = 2.0 * np.arctan2(s, w)
    return v * (angle / s)


def rotvec_to_matrix(v):
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < 1e-300:
        return np.eye(3)
    axis = v / angle
    h = 0.5 * angle
    return quat_to_matrix(np.concatenate(([np.cos(h)], np.sin(h) * axis)))


def orientation_error(R_target, R_current):
    """Base-frame rotation vector taking ``R_current`` onto ``R_target``."""
    return matrix_to_rotvec(np.asarray(R_target) @ np.asarray(R_current).T)


def slerp_matrix(R0, R1, s):
    """Constant-angular-velocity interpolation, ``s`` in [0, 1]."""
    w = orientation_error(R1, R0)
    return rotvec_to_matrix(s * w) @ R0
