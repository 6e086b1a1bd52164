from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bimanual import geom
from bimanual.geom import Pose


def matrix_of_quat(q):
    # independent oracle: textbook rotation matrix from a unit quaternion, one at a time
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def homogeneous(p: Pose):
    m = np.eye(4)
    m[:3, :3] = matrix_of_quat(p.orient)
    m[:3, 3] = p.pos
    return m


def rodrigues(v):
    th = np.linalg.norm(v)
    if th == 0:
        return np.eye(3)
    k = v / th
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K


def test_identity_pose_serialization():
    assert np.array_equal(Pose.identity().to_array(), [0, 0, 0, 1, 0, 0, 0])


def test_canonical_sign():
    q = geom.canonicalize(np.array([-0.5, 0.5, 0.5, 0.5]))
    assert np.allclose(q, [0.5, -0.5, -0.5, -0.5])
    half = geom.canonicalize(np.array([0.0, -1.0, 0.0, 0.0]))
    assert np.array_equal(half, [0.0, 1.0, 0.0, 0.0])
    half2 = geom.canonicalize(np.array([0.0, 0.0, -0.6, 0.8]))
    assert np.allclose(half2, [0.0, 0.0, 0.6, -0.8])


def test_half_turn_sign_ignores_roundoff_in_w():
    a = geom.canonicalize(np.array([1e-16, 0.0, 0.6, -0.8]))
    b = geom.canonicalize(np.array([-1e-16, 0.0, -0.6, 0.8]))
    assert np.allclose(a, b, atol=1e-15)
    assert a[2] > 0


def test_canonicalize_idempotent_bitwise():
    rng = np.random.default_rng(0)
    q = geom.canonicalize(rng.normal(size=(1000, 4)))
    assert np.array_equal(geom.canonicalize(q), q)


def test_compose_inverse_relative_match_matrix_oracle():
    rng = np.random.default_rng(1)
    a = Pose.random(rng, (10_000,))
    b = Pose.random(rng, (10_000,))
    ab = geom.compose(a, b).matrix()
    ai = geom.inverse(a).matrix()
    rel = geom.relative_pose(b, a).matrix()
    worst = 0.0
    for i in range(0, 10_000, 97):
        pa = Pose(a.pos[i], a.orient[i])
        pb = Pose(b.pos[i], b.orient[i])
        Ma, Mb = homogeneous(pa), homogeneous(pb)
        worst = max(worst, np.abs(ab[i] - Ma @ Mb).max(), np.abs(ai[i] - np.linalg.inv(Ma)).max(),
                    np.abs(rel[i] - np.linalg.inv(Ma) @ Mb).max())
    # full batch against the vectorized matrix product
    Ma, Mb = a.matrix(), b.matrix()
    worst = max(worst, np.abs(ab - Ma @ Mb).max(), np.abs(ai @ Ma - np.eye(4)).max())
    assert worst < 1e-9


def test_quat_to_matrix_matches_oracle():
    rng = np.random.default_rng(2)
    q = geom.canonicalize(rng.normal(size=(200, 4)))
    for qi, mi in zip(q, geom.quat_to_matrix(q)):
        assert np.allclose(mi, matrix_of_quat(qi), atol=1e-12)


def test_rotvec_matches_rodrigues():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(200, 3))
    v *= (rng.uniform(0, np.pi, 200) / np.linalg.norm(v, axis=1))[:, None]
    for vi, qi in zip(v, geom.rotvec_to_quat(v)):
        assert np.allclose(matrix_of_quat(qi), rodrigues(vi), atol=1e-12)


def test_rotvec_round_trip():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(10_000, 3))
    v *= (rng.uniform(0, np.pi * (1 - 1e-9), 10_000) / np.linalg.norm(v, axis=1))[:, None]
    back = geom.quat_to_rotvec(geom.rotvec_to_quat(v))
    assert np.abs(back - v).max() < 1e-9


def test_small_angle_series_continuous():
    for th in (1e-12, 5e-9, 1e-8, 2e-8, 1e-6):
        v = np.array([th, -th / 2, th / 3])
        assert np.allclose(geom.quat_to_rotvec(geom.rotvec_to_quat(v)), v, rtol=1e-9, atol=1e-20)
    assert np.array_equal(geom.rotvec_to_quat(np.zeros(3)), [1.0, 0, 0, 0])


def test_pose_dist_apply_round_trip():
    rng = np.random.default_rng(5)
    a = Pose.random(rng, (500,))
    b = Pose.random(rng, (500,))
    moved = geom.apply_delta(b, geom.pose_dist(a, b))
    assert np.allclose(moved.pos, a.pos, atol=1e-12)
    assert np.allclose(moved.orient, a.orient, atol=1e-9)


def test_pose_dist_of_self_is_zero():
    rng = np.random.default_rng(6)
    a = Pose.random(rng, (100,))
    d = geom.pose_dist(a, a)
    assert np.abs(d.to_array()).max() < 1e-12


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 1e-3),
       arrays(float, 3, elements=finite))
def test_rotation_preserves_norm(q, v):
    r = geom.quat_rotate(geom.canonicalize(q), v)
    assert np.isclose(np.linalg.norm(r), np.linalg.norm(v), rtol=1e-12, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 7, elements=st.floats(-1, 1)).filter(lambda a: np.linalg.norm(a[3:]) > 1e-3))
def test_pose_invariants_and_inverse(a):
    p = Pose.from_array(a)
    assert np.isclose(np.linalg.norm(p.orient), 1.0, atol=1e-12)
    assert p.orient[0] >= -geom.SIGN_TOL
    e = geom.compose(p, geom.inverse(p))
    assert np.allclose(e.pos, 0, atol=1e-12)
    assert np.allclose(e.orient, [1, 0, 0, 0], atol=1e-12)


def test_pose_batch_indexing():
    rng = np.random.default_rng(7)
    p = Pose.random(rng, (5,))
    assert np.array_equal(p[2].to_array(), p.to_array()[2])


def test_transform_point():
    p = Pose(np.array([1.0, 2.0, 3.0]), geom.axis_angle_quat([0, 0, 1], np.pi / 2))
    assert np.allclose(p.transform_point([1.0, 0, 0]), [1.0, 3.0, 3.0])


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_quat_axis_identity(axis):
    e = np.zeros(3)
    e[axis] = 1
    assert np.allclose(geom.quat_axis(np.array([1.0, 0, 0, 0]), axis), e)
