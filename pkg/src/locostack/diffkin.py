"""Tape (autodiff) versions of forward kinematics and terrain queries.

These mirror skeleton.fk and terrain.height_at/penetration exactly on
the forward pass (asserted by tests) and are used wherever gradients
must flow through body positions: the motion augmentation optimizer and
the generator's joint-consistency and penetration losses.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, concat, maximum, stack
from .skeleton import Skeleton
from .terrain import HeightField


def t_cross(a: Tensor, b: Tensor) -> Tensor:
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def t_quat_normalize(q: Tensor) -> Tensor:
    n = (q * q).sum(axis=-1, keepdims=True) ** 0.5
    return q / n


def t_quat_multiply(a: Tensor, b: Tensor) -> Tensor:
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def t_quat_rotate(q: Tensor, v) -> Tensor:
    v = as_tensor(v)
    w = q[..., 0:1]
    u = q[..., 1:4]
    uv = t_cross(u, v)
    return v + (w * uv + t_cross(u, uv)) * 2.0


def t_axis_angle(axis: np.ndarray, angle: Tensor) -> Tensor:
    half = angle * 0.5
    c, s = half.cos(), half.sin()
    return stack([c, s * float(axis[0]), s * float(axis[1]), s * float(axis[2])], axis=-1)


def t_fk(skel: Skeleton, root_pos: Tensor, root_quat: Tensor, joint_pos: Tensor) -> Tensor:
    """Differentiable fk: world link positions, shape (..., B, 3)."""
    pos: list[Tensor] = [root_pos]
    rot: list[Tensor] = [root_quat]
    for i in range(1, skel.body_count):
        link = skel.links[i]
        p_rot = rot[link.parent]
        pos.append(pos[link.parent] + t_quat_rotate(p_rot, link.offset))
        rot.append(t_quat_multiply(p_rot, t_axis_angle(link.axis, joint_pos[..., i - 1])))
    return stack(pos, axis=-2)


def t_height_at(field: HeightField, xy: Tensor) -> Tensor:
    """Differentiable bilinear height query (zero gradient outside the grid)."""
    ny, nx = field.heights.shape
    cs = field.cell_size
    gx = ((xy[..., 0] - float(field.origin[0])) * (1.0 / cs)).clip(0.0, nx - 1.0)
    gy = ((xy[..., 1] - float(field.origin[1])) * (1.0 / cs)).clip(0.0, ny - 1.0)
    ix = np.minimum(gx.data.astype(np.int64), max(nx - 2, 0))
    iy = np.minimum(gy.data.astype(np.int64), max(ny - 2, 0))
    fx = gx - ix
    fy = gy - iy
    h = field.heights
    ix1 = np.minimum(ix + 1, nx - 1)
    iy1 = np.minimum(iy + 1, ny - 1)
    h00, h10 = Tensor(h[iy, ix]), Tensor(h[iy, ix1])
    h01, h11 = Tensor(h[iy1, ix]), Tensor(h[iy1, ix1])
    one = 1.0
    return (h00 * (one - fx) * (one - fy) + h10 * fx * (one - fy)
            + h01 * (one - fx) * fy + h11 * fx * fy)


def t_penetration(field: HeightField, points: Tensor) -> Tensor:
    """Differentiable penetration depth, max(surface - z, 0)."""
    xy = concat([points[..., 0:1], points[..., 1:2]], axis=-1)
    return maximum(t_height_at(field, xy) - points[..., 2], 0.0)
