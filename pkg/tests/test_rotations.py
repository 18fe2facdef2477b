import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from kstsim.rotations import (
    angles_to_matrix,
    matrix_to_angles,
    matrix_to_quat,
    matrix_to_rotvec,
    orientation_error,
    quat_to_matrix,
    rotvec_to_matrix,
    slerp_matrix,
)

from oracles import zyx_matrix


def wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def random_angles(rng, n, beta_margin=1e-3):
    a = rng.uniform(-math.pi, math.pi, n)
    b = rng.uniform(-math.pi / 2 + beta_margin, math.pi / 2 - beta_margin, n)
    c = rng.uniform(-math.pi, math.pi, n)
    return zip(a, b, c)


def test_zero_angles_identity():
    assert np.array_equal(angles_to_matrix(0, 0, 0), np.eye(3))


def test_example_pose_orientation():
    M = angles_to_matrix(-math.pi, 0, -math.pi)
    assert np.allclose(M, zyx_matrix(-math.pi, 0, -math.pi), atol=1e-15)
    # -pi about x then -pi about z: a half turn about y
    assert np.allclose(M, np.diag([-1.0, 1.0, -1.0]), atol=1e-15)
    a, b, c = matrix_to_angles(M)
    assert np.allclose(angles_to_matrix(a, b, c), M, atol=1e-15)
    assert abs(abs(a) - math.pi) < 1e-12 and abs(b) < 1e-12 and abs(abs(c) - math.pi) < 1e-12


def test_matches_scipy_convention(rng):
    for a, b, c in random_angles(rng, 200):
        ref = Rotation.from_euler("ZYX", [a, b, c]).as_matrix()
        assert np.max(np.abs(angles_to_matrix(a, b, c) - ref)) < 1e-14


def test_orthonormal(rng):
    for a, b, c in random_angles(rng, 500, 0):
        R = angles_to_matrix(a, b, c)
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
        assert abs(np.linalg.det(R) - 1) < 1e-12


def test_angle_roundtrip(rng):
    for a, b, c in random_angles(rng, 1000):
        a2, b2, c2 = matrix_to_angles(angles_to_matrix(a, b, c))
        assert abs(wrap(a2 - a)) < 1e-10 and abs(b2 - b) < 1e-10 and abs(wrap(c2 - c)) < 1e-10


def test_conversion_group(rng):
    for a, b, c in random_angles(rng, 1000):
        R = quat_to_matrix(matrix_to_quat(angles_to_matrix(a, b, c)))
        a2, b2, c2 = matrix_to_angles(R)
        assert abs(wrap(a2 - a)) < 1e-10 and abs(b2 - b) < 1e-10 and abs(wrap(c2 - c)) < 1e-10


@pytest.mark.parametrize("beta", [math.pi / 2, -math.pi / 2])
def test_gimbal_lock_flag(beta):
    R = angles_to_matrix(0.3, beta, 0.5)
    (a, b, c), degenerate = matrix_to_angles(R, return_degenerate=True)
    assert degenerate and c == 0.0
    assert np.allclose(angles_to_matrix(a, b, c), R, atol=1e-12)


def test_quaternion_roundtrip(rng):
    for _ in range(1000):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        if q[0] < 0:
            q = -q
        q2 = matrix_to_quat(quat_to_matrix(q))
        assert q2[0] >= 0
        assert abs(np.linalg.norm(q2) - 1) < 1e-12
        assert np.max(np.abs(q2 - q)) < 1e-12


def test_quaternion_matches_scipy(rng):
    for a, b, c in random_angles(rng, 200):
        R = angles_to_matrix(a, b, c)
        x, y, z, w = Rotation.from_matrix(R).as_quat()
        ref = np.array([w, x, y, z]) * (1 if w >= 0 else -1)
        assert np.max(np.abs(matrix_to_quat(R) - ref)) < 1e-12


def test_rotvec(rng):
    for _ in range(200):
        v = rng.normal(size=3)
        v *= rng.uniform(0, math.pi - 1e-6) / np.linalg.norm(v)
        R = rotvec_to_matrix(v)
        assert np.allclose(R, Rotation.from_rotvec(v).as_matrix(), atol=1e-13)
        assert np.allclose(matrix_to_rotvec(R), v, atol=1e-10)


def test_orientation_error_and_slerp(rng):
    for a, b, c in random_angles(rng, 50):
        R0 = angles_to_matrix(a, b, c)
        k = rng.normal(size=3)
        k /= np.linalg.norm(k)
        theta = rng.uniform(0.01, 3.0)
        R1 = rotvec_to_matrix(theta * k) @ R0
        assert np.allclose(orientation_error(R1, R0), theta * k, atol=1e-10)
        for s in (0.0, 0.25, 0.5, 1.0):
            Rs = slerp_matrix(R0, R1, s)
            assert np.allclose(Rs, rotvec_to_matrix(s * theta * k) @ R0, atol=1e-12)
