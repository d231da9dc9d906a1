"""Quaternion math on numpy arrays.

Quaternions are stored [w, x, y, z], unit norm, and canonicalized to
w >= 0 so that q and -q (which encode the same rotation) have one
representation. All functions broadcast over leading batch dimensions.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

UNIT_TOL = 1e-9


def normalize(q: np.ndarray) -> np.ndarray:
    """Unit-normalize and canonicalize sign (w >= 0)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise ValidationError(f"quaternion must have 4 components, got shape {q.shape}")
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValidationError("cannot normalize a near-zero quaternion")
    q = q / n
    return np.where(q[..., :1] < 0.0, -q, q)


def identity(shape: tuple[int, ...] = ()) -> np.ndarray:
    q = np.zeros(shape + (4,))
    q[..., 0] = 1.0
    return q


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b (no renormalization)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


# for unit quaternions the inverse is the conjugate
inverse = conjugate


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q: R(q) v."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def from_axis_angle(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Quaternion for a rotation of `angle` rad about unit `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle
    w = np.cos(half)
    xyz = axis * np.sin(half)[..., None]
    return np.concatenate([w[..., None], xyz], axis=-1)


def from_yaw(yaw: np.ndarray) -> np.ndarray:
    yaw = np.asarray(yaw, dtype=np.float64)
    half = 0.5 * yaw
    zeros = np.zeros_like(half)
    return np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1)


def yaw_of(q: np.ndarray) -> np.ndarray:
    """Yaw angle of the rotated x-axis projected to the horizontal plane."""
    x_axis = rotate(q, np.array([1.0, 0.0, 0.0]))
    return np.arctan2(x_axis[..., 1], x_axis[..., 0])


def to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def to_rotvec(q: np.ndarray) -> np.ndarray:
    """Axis-angle (rotation) vector of q, with the sign canonicalized first.

    The returned angle is in [0, pi], so q and -q map to the same vector.
    """
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    xyz = q[..., 1:]
    s = np.linalg.norm(xyz, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    # sin(angle/2) ~ angle/2 near zero: fall back to the linearization
    scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return xyz * scale[..., None]


def relative_rotvec(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation vector of a ⊗ b⁻¹; zero iff a and b are the same rotation."""
    return to_rotvec(multiply(a, conjugate(b)))


def geodesic_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle in [0, pi] between the rotations a and b."""
    return np.linalg.norm(relative_rotvec(a, b), axis=-1)


def slerp(a: np.ndarray, b: np.ndarray, u: float | np.ndarray) -> np.ndarray:
    """Spherical interpolation along the shorter arc."""
    a = normalize(a)
    b = normalize(b)
    d = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(d < 0.0, -b, b)
    d = np.abs(np.clip(d, -1.0, 1.0))
    theta = np.arccos(d)
    u = np.asarray(u, dtype=np.float64)[..., None] if np.ndim(u) else float(u)
    small = theta < 1e-8
    st = np.where(small, 1.0, np.sin(theta))
    wa = np.where(small, 1.0 - u, np.sin((1.0 - u) * theta) / st)
    wb = np.where(small, u, np.sin(u * theta) / st)
    return normalize(wa * a + wb * b)


def assert_unit(q: np.ndarray, tol: float = UNIT_TOL) -> None:
    n = np.linalg.norm(np.asarray(q, dtype=np.float64), axis=-1)
    err = float(np.max(np.abs(n - 1.0)))
    if err > tol:
        raise ValidationError(f"quaternion norm off unit by {err:.3e} (tol {tol:.0e})")
