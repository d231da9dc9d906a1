import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locostack import quat
from locostack.errors import ValidationError
from util import quat_to_matrix_ref, random_unit_quat


def test_normalize_unit_and_sign():
    q = quat.normalize([-2.0, 0.0, 0.0, 2.0])
    assert abs(np.linalg.norm(q) - 1.0) < 1e-9
    assert q[0] >= 0.0


def test_normalize_rejects_zero():
    with pytest.raises(ValidationError):
        quat.normalize([0.0, 0.0, 0.0, 0.0])


def test_multiply_matches_matrix_composition():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a, b = random_unit_quat(rng), random_unit_quat(rng)
        m = quat_to_matrix_ref(a) @ quat_to_matrix_ref(b)
        assert np.allclose(quat.to_matrix(quat.multiply(a, b)), m, atol=1e-12)


def test_rotate_matches_matrix():
    rng = np.random.default_rng(8)
    for _ in range(50):
        q = random_unit_quat(rng)
        v = rng.normal(size=3)
        assert np.allclose(quat.rotate(q, v), quat_to_matrix_ref(q) @ v, atol=1e-12)


def test_relative_rotvec_identity():
    e = quat.identity()
    assert np.allclose(quat.relative_rotvec(e, e), 0.0)


def test_relative_rotvec_double_cover():
    rng = np.random.default_rng(9)
    q = random_unit_quat(rng)
    assert np.allclose(quat.relative_rotvec(q, -q), 0.0, atol=1e-12)


def test_relative_rotvec_quarter_turn():
    # 90 deg about z vs identity -> (0, 0, pi/2); cross-checked by composing
    # rotation matrices: R_rel should equal rotation by pi/2 about z.
    a = quat.from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2)
    rv = quat.relative_rotvec(a, quat.identity())
    assert np.allclose(rv, [0.0, 0.0, np.pi / 2], atol=1e-9)
    r_rel = quat_to_matrix_ref(a) @ quat_to_matrix_ref(quat.identity()).T
    c, s = np.cos(np.pi / 2), np.sin(np.pi / 2)
    assert np.allclose(r_rel, [[c, -s, 0], [s, c, 0], [0, 0, 1]], atol=1e-12)


def test_rotvec_roundtrip():
    rng = np.random.default_rng(10)
    for _ in range(100):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, np.pi - 1e-6)
        q = quat.from_axis_angle(axis, angle)
        assert np.allclose(quat.to_rotvec(q), axis * angle, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_operations_preserve_unit_norm(seed):
    rng = np.random.default_rng(seed)
    a, b = random_unit_quat(rng), random_unit_quat(rng)
    for q in (quat.normalize(quat.multiply(a, b)), quat.slerp(a, b, rng.uniform()),
              quat.from_yaw(rng.uniform(-np.pi, np.pi))):
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_relative_zero_iff_same_rotation(seed):
    rng = np.random.default_rng(seed)
    a = random_unit_quat(rng)
    b = random_unit_quat(rng)
    rv = quat.relative_rotvec(a, b)
    geo = quat.geodesic_angle(a, b)
    assert (np.linalg.norm(rv) < 1e-9) == (geo < 1e-9)
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    assert np.linalg.norm(quat.relative_rotvec(a, sign * a)) < 1e-9


def test_yaw_of_and_from_yaw():
    for yaw in np.linspace(-3.0, 3.0, 13):
        assert abs(quat.yaw_of(quat.from_yaw(yaw)) - yaw) < 1e-12


def test_batched_shapes():
    rng = np.random.default_rng(11)
    qs = np.stack([random_unit_quat(rng) for _ in range(6)]).reshape(2, 3, 4)
    vs = rng.normal(size=(2, 3, 3))
    assert quat.rotate(qs, vs).shape == (2, 3, 3)
    assert quat.multiply(qs, qs).shape == (2, 3, 4)
    assert quat.to_rotvec(qs).shape == (2, 3, 3)
