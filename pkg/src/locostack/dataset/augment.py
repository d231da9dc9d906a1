"""Kinematic motion augmentation: re-optimize a clip against modified
terrain with penetration, smoothness, and deviation losses.

Decision variables are the per-frame root positions and joint angles;
body points are recomputed through differentiable fk each iteration, so
the penetration loss differentiates through the kinematic chain. The
smoothness term acts on the displacement from the source clip (second
differences of x - x_orig), which makes the unmodified clip an exact
fixed point of the objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import quat
from ..autodiff import Tensor
from ..diffkin import t_fk, t_penetration
from ..errors import NumericFailure, ValidationError
from ..motion import MotionClip, MotionFrame
from ..skeleton import Skeleton, default_humanoid
from ..terrain import HeightField, height_at
from .gait import JointMap, solve_leg


@dataclass(frozen=True)
class AugmentConfig:
    w_pen: float = 10.0
    w_smooth: float = 1.0
    w_dev: float = 0.1
    max_iters: int = 500
    step: float = 1e-2
    tolerance: float = 1e-6
    smooth_on_displacement: bool = True
    reproject_contacts: bool = True

    def __post_init__(self):
        if min(self.w_pen, self.w_smooth, self.w_dev) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be positive")


@dataclass
class AugmentResult:
    clip: MotionClip
    losses: list[float]
    grad_norm: float
    iterations: int


def augment_loss(x: Tensor, x_orig: np.ndarray, quats: np.ndarray, skel: Skeleton,
                 fld: HeightField, cfg: AugmentConfig) -> Tensor:
    """Objective over the stacked variables x = (T, 3 + J)."""
    root = x[:, 0:3]
    joints = x[:, 3:]
    body = t_fk(skel, root, Tensor(quats), joints)  # (T, B, 3)
    pen = t_penetration(fld, body.reshape(-1, 3))
    loss = (pen * pen).sum() * cfg.w_pen
    basis = x - x_orig if cfg.smooth_on_displacement else x
    d2 = basis[2:] - basis[1:-1] * 2.0 + basis[:-2]
    loss = loss + (d2 * d2).sum() * cfg.w_smooth
    dev = x - x_orig
    loss = loss + (dev * dev).sum() * cfg.w_dev
    return loss


def augment(clip: MotionClip, new_terrain: HeightField, cfg: AugmentConfig | None = None,
            skel: Skeleton | None = None) -> MotionClip:
    return augment_detailed(clip, new_terrain, cfg, skel).clip


def augment_detailed(clip: MotionClip, new_terrain: HeightField,
                     cfg: AugmentConfig | None = None,
                     skel: Skeleton | None = None) -> AugmentResult:
    cfg = cfg or AugmentConfig()
    skel = skel or default_humanoid()
    quats = np.stack([f.root_quat for f in clip.frames])
    x_orig = np.stack([np.concatenate([f.root_pos, f.joint_pos]) for f in clip.frames])

    def eval_loss(x_data: np.ndarray, with_grad: bool):
        x = Tensor(x_data, requires_grad=with_grad)
        loss = augment_loss(x, x_orig, quats, skel, new_terrain, cfg)
        val = float(loss.data)
        if not np.isfinite(val):
            return val, None
        if with_grad:
            loss.backward()
            return val, x.grad
        return val, None

    x = x_orig.copy()
    step = cfg.step
    losses = []
    grad_norm = np.inf
    it = 0
    for it in range(cfg.max_iters):
        val, grad = eval_loss(x, with_grad=True)
        if not np.isfinite(val) or grad is None or not np.all(np.isfinite(grad)):
            raise NumericFailure("augmentation loss became non-finite", step=it)
        losses.append(val)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < cfg.tolerance:
            break
        # backtracking line search (Armijo)
        accepted = False
        for _ in range(30):
            cand = x - step * grad
            cand_val, _ = eval_loss(cand, with_grad=False)
            if np.isfinite(cand_val) and cand_val <= val - 1e-4 * step * grad_norm ** 2:
                x = cand
                step = min(step * 1.3, 1.0)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # no descent step found at machine precision

    if np.array_equal(x, x_orig):  # optimizer never moved: exact fixed point
        return AugmentResult(clip=clip, losses=losses, grad_norm=grad_norm, iterations=it + 1)

    frames = []
    for i in range(len(clip.frames)):
        frames.append(MotionFrame.from_pose(skel, x[i, :3], quats[i], x[i, 3:]))
    out = MotionClip(fps=clip.fps, frames=frames, label=clip.label)
    if cfg.reproject_contacts:
        out = reproject_contacts(clip, out, new_terrain, skel)
    return AugmentResult(clip=out, losses=losses, grad_norm=grad_norm, iterations=it + 1)


def detect_stance(clip: MotionClip, skel: Skeleton) -> np.ndarray:
    """(T, n_feet) bool mask: frames where each foot point is stationary.

    Stance is detected from the source clip by constancy of the foot
    body point (synthesized stance feet are pinned exactly).
    """
    feet = list(skel.foot_indices)
    pts = np.stack([f.body_pos[feet] for f in clip.frames])  # (T, nf, 3)
    still = np.zeros((len(clip.frames), len(feet)), dtype=bool)
    d = np.linalg.norm(np.diff(pts, axis=0), axis=-1) * clip.fps  # (T-1, nf)
    thresh = 1e-4
    still[:-1] |= d < thresh
    still[1:] |= d < thresh
    return still


def reproject_contacts(src: MotionClip, opt: MotionClip, fld: HeightField,
                       skel: Skeleton) -> MotionClip:
    """Snap stance feet back onto the terrain surface after optimization.

    Per stance run, the foot is re-pinned at its mean optimized xy with
    z from the terrain, and the leg re-solved by IK.
    """
    jm = JointMap(skel)
    feet = list(skel.foot_indices)
    sides = ["L", "R"]
    stance = detect_stance(src, skel)
    t_count = len(opt.frames)
    targets = np.stack([f.body_pos[feet] for f in opt.frames])  # (T, nf, 3)
    pinned = targets.copy()
    for fi in range(len(feet)):
        t = 0
        while t < t_count:
            if not stance[t, fi]:
                t += 1
                continue
            t1 = t
            while t1 < t_count and stance[t1, fi]:
                t1 += 1
            xy = targets[t:t1, fi, :2].mean(axis=0)
            z = float(height_at(fld, xy))
            pinned[t:t1, fi] = np.array([xy[0], xy[1], z])
            t = t1
    frames = []
    for i, frame in enumerate(opt.frames):
        if not stance[i].any():
            frames.append(frame)
            continue
        joints = frame.joint_pos.copy()
        yaw = float(quat.yaw_of(frame.root_quat))
        for fi, side in enumerate(sides):
            if stance[i, fi]:
                solve_leg(jm, joints, frame.root_pos, yaw, side, pinned[i, fi])
        frames.append(MotionFrame.from_pose(skel, frame.root_pos, frame.root_quat, joints))
    return MotionClip(fps=opt.fps, frames=frames, label=opt.label)
