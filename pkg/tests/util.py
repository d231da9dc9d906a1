"""Shared test oracles: finite-difference gradients and a homogeneous
matrix forward-kinematics chain, both independent of the library paths
they check."""

from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a.reshape(-1)), np.linalg.norm(b.reshape(-1)), 1e-12)
    return float(np.linalg.norm((a - b).reshape(-1)) / denom)


def quat_to_matrix_ref(q):
    """Independent quaternion-to-matrix: rotate the basis vectors via the
    sandwich product with explicit Hamilton multiplications."""
    def qmul(a, b):
        w1, x1, y1, z1 = a
        w2, x2, y2, z2 = b
        return np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ])
    conj = q * np.array([1.0, -1, -1, -1])
    cols = []
    for e in np.eye(3):
        v = np.concatenate([[0.0], e])
        cols.append(qmul(qmul(q, v), conj)[1:])
    return np.stack(cols, axis=1)


def fk_homogeneous_oracle(skel, root_pos, root_quat, joint_pos) -> np.ndarray:
    """4x4 homogeneous-matrix chain, one link at a time."""
    def rot_about(axis, angle):
        axis = np.asarray(axis, float)
        c, s = np.cos(angle), np.sin(angle)
        x, y, z = axis
        K = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
        return np.eye(3) * c + (1 - c) * np.outer(axis, axis) + s * K

    def make_T(R, p):
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = p
        return T

    transforms = [make_T(quat_to_matrix_ref(np.asarray(root_quat, float)), root_pos)]
    for i in range(1, skel.body_count):
        link = skel.links[i]
        local = make_T(rot_about(link.axis, joint_pos[i - 1]), link.offset)
        transforms.append(transforms[link.parent] @ local)
    return np.stack([T[:3, 3] for T in transforms])


def random_unit_quat(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q
