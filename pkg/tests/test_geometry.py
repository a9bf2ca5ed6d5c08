import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm, logm

from evtrack.errors import DomainError
from evtrack.geometry import (
    CameraIntrinsics,
    PoseSE3,
    TemplateView,
    back_project,
    back_project_points,
    exp_map,
    hat,
    is_rotation,
    log_map,
    project,
    project_points,
    warp,
    warp_jacobian,
)

K100 = CameraIntrinsics(100.0, 100.0, 120.0, 90.0, 240, 180)

finite = st.floats(-1.0, 1.0, allow_nan=False)
tangent = st.lists(finite, min_size=6, max_size=6).map(np.array)


def twist_matrix(theta):
    m = np.zeros((4, 4))
    m[:3, :3] = hat(theta[3:])
    m[:3, 3] = theta[:3]
    return m


def test_intrinsics_invariants():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 100.0, 120.0, 90.0, 240, 180)
    with pytest.raises(ValueError):
        CameraIntrinsics(100.0, 100.0, 240.0, 90.0, 240, 180)


def test_intrinsics_file_round_trip(tmp_path):
    K100.to_file(tmp_path / "calib.txt")
    assert CameraIntrinsics.from_file(tmp_path / "calib.txt") == K100


def test_project_examples():
    np.testing.assert_array_equal(project([0, 0, 1], K100), [120, 90])
    np.testing.assert_array_equal(project([0.5, 0, 1], K100), [170, 90])
    with pytest.raises(DomainError):
        project([0, 0, -1], K100)


def test_back_project_examples():
    np.testing.assert_array_equal(back_project([120, 90], 2.0, K100), [0, 0, 2])
    np.testing.assert_array_equal(back_project([170, 90], 1.0, K100), [0.5, 0, 1])
    with pytest.raises(DomainError):
        back_project([1, 1], 0.0, K100)


def test_round_trip_random():
    rng = np.random.default_rng(0)
    px = rng.uniform([0, 0], [239, 179], (100, 2))
    d = rng.uniform(0.1, 50, 100)
    P = back_project_points(px, d, K100)
    np.testing.assert_allclose(P[:, 2], d)
    uv, ok = project_points(P, K100)
    assert ok.all()
    np.testing.assert_allclose(uv, px, atol=1e-9)


def test_exp_identity_and_translation():
    np.testing.assert_array_equal(exp_map(np.zeros(6)).matrix, np.eye(4))
    T = exp_map([0.1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(T.rotation, np.eye(3))
    np.testing.assert_allclose(T.translation, [0.1, 0, 0])


def test_exp_rejects_bad_input():
    with pytest.raises(DomainError):
        exp_map([0, 0, 0, np.nan, 0, 0])
    with pytest.raises(DomainError):
        exp_map([0, 0, 0])


@settings(max_examples=200, deadline=None)
@given(tangent)
def test_exp_matches_matrix_exponential(theta):
    # independent oracle: the matrix exponential of the twist
    np.testing.assert_allclose(exp_map(theta).matrix, expm(twist_matrix(theta)), atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(tangent)
def test_log_matches_matrix_logarithm(theta):
    T = exp_map(theta)
    L = np.real(logm(T.matrix))
    oracle = np.array([L[0, 3], L[1, 3], L[2, 3], L[2, 1], L[0, 2], L[1, 0]])
    np.testing.assert_allclose(log_map(T), oracle, atol=1e-8)


@settings(max_examples=300, deadline=None)
@given(tangent, st.floats(0.0, 3.1, allow_nan=False))
def test_log_exp_round_trip(theta, angle):
    axis = theta[3:]
    n = np.linalg.norm(axis)
    if n > 1e-6:
        theta = theta.copy()
        theta[3:] = axis / n * angle
    T = exp_map(theta)
    assert is_rotation(T.rotation)
    np.testing.assert_allclose(log_map(T), theta, atol=1e-8)
    np.testing.assert_allclose(exp_map(log_map(T)).matrix, T.matrix, atol=1e-9)


def test_small_angle_branch_continuous():
    for a in (1e-12, 1e-9, 1e-8, 1e-7):
        theta = np.array([0.3, -0.2, 0.1, a, -a, 0.5 * a])
        np.testing.assert_allclose(exp_map(theta).matrix, expm(twist_matrix(theta)), atol=1e-14)
        np.testing.assert_allclose(log_map(exp_map(theta)), theta, atol=1e-14)


def test_log_near_pi():
    theta = np.array([0.1, 0.2, 0.3, 0.0, np.pi - 1e-7, 0.0])
    np.testing.assert_allclose(log_map(exp_map(theta)), theta, atol=1e-6)


def test_pose_composition_and_inverse():
    rng = np.random.default_rng(3)
    A = exp_map(rng.normal(size=6) * 0.5)
    B = exp_map(rng.normal(size=6) * 0.5)
    np.testing.assert_allclose((A @ B).matrix, A.matrix @ B.matrix)
    np.testing.assert_allclose((A @ A.inverse()).matrix, np.eye(4), atol=1e-12)
    P = rng.normal(size=(5, 3))
    np.testing.assert_allclose(A @ P, P @ A.rotation.T + A.translation)


def test_pose_matrix_read_only():
    T = PoseSE3.identity()
    with pytest.raises(ValueError):
        T.matrix[0, 0] = 2.0


def test_warp_identity_exact():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.uniform([0, 0], [239, 179])
        px, ok = warp(x, rng.uniform(0.5, 10), np.zeros(6), K100)
        assert ok
        np.testing.assert_array_equal(px, x)


def test_warp_z_translation_halving_depth():
    # moving the camera halfway towards the point halves its depth, so the
    # pixel offset from the principal point doubles
    x = np.array([150.0, 70.0])
    d = 4.0
    px, ok = warp(x, d, [0, 0, -d / 2, 0, 0, 0], K100)
    assert ok
    np.testing.assert_allclose(px - [120, 90], 2 * (x - [120, 90]), atol=1e-12)


def test_warp_behind_camera_invalid():
    px, ok = warp([120.0, 90.0], 1.0, [0, 0, -2.0, 0, 0, 0], K100)
    assert not ok
    assert np.isnan(px).all()


def _fd_warp_jacobian(x, d, K, h=1e-6):
    J = np.zeros((2, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        J[:, k] = (warp(x, d, e, K)[0] - warp(x, d, -e, K)[0]) / (2 * h)
    return J


def test_warp_jacobian_examples():
    J = warp_jacobian([120.0, 90.0], 2.0, K100)
    assert J[0, 0] == pytest.approx(100.0 / 2.0)
    J_far = warp_jacobian([30.0, 20.0], 1e12, K100)
    np.testing.assert_allclose(J_far[:, :3], 0.0, atol=1e-9)


def test_warp_jacobian_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(200):
        x = rng.uniform([0, 0], [239, 179])
        d = rng.uniform(0.5, 10)
        Ja = warp_jacobian(x, d, K100)
        Jn = _fd_warp_jacobian(x, d, K100)
        assert np.linalg.norm(Ja - Jn) / np.linalg.norm(Jn) < 1e-5


def test_template_view_invariants():
    with pytest.raises(DomainError):
        TemplateView(PoseSE3.identity(), [[1.0, 1.0]], [0.0])
    with pytest.raises(DomainError):
        TemplateView(PoseSE3.identity(), [[500.0, 1.0]], [1.0], K100)


def test_template_from_map_projects_back():
    rng = np.random.default_rng(2)
    T_rw = exp_map([0.1, -0.05, 0.2, 0.02, -0.01, 0.03])
    world = rng.uniform([-3, -2, 3], [3, 2, 6], (2000, 3))
    tmpl = TemplateView.from_map(world, T_rw, K100, max_points=500)
    assert len(tmpl) == 500
    P_w = T_rw.inverse() @ tmpl.points()
    # every template point is one of the map points
    d = np.linalg.norm(world[None] - P_w[:, None], axis=2).min(axis=1)
    assert d.max() < 1e-9
