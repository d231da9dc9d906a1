"""Reference streams for the tracker: fixed clip replay and receding-
horizon windows from a frozen motion generator.

Both providers expose per-step batched ReferenceFrame views; velocities
come from finite differences over the underlying feature sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import quat
from ..generator import Anchor, Condition, Denoiser
from ..generator.net import timestep_embedding
from ..generator.schedule import sub_schedule
from ..generator.window import canonicalize, decanonicalize
from ..motion import MotionClip
from ..rewards import ReferenceFrame
from ..skeleton import Skeleton
from ..terrain import HeightField, height_at, sample_scan

REPLAN_PERIOD = 0.25  # s; windows are regenerated at the first step on or
                      # after each multiple of this period


def feature_reference_arrays(feats: np.ndarray, fps: float, skel: Skeleton) -> dict:
    """Per-frame reference quantities from a (..., T, F) feature sequence."""
    j, b = skel.joint_count, skel.body_count
    key = list(skel.key_body_indices)
    root = feats[..., 0:3]
    rq = quat.normalize(feats[..., 3:7])
    jp = feats[..., 7:7 + j]
    body = feats[..., 7 + j:].reshape(*feats.shape[:-1], b, 3)

    t_axis = feats.ndim - 2
    lo = np.maximum(np.arange(feats.shape[t_axis]) - 1, 0)
    hi = np.minimum(np.arange(feats.shape[t_axis]) + 1, feats.shape[t_axis] - 1)
    scale = (fps / np.maximum(hi - lo, 1))[..., None]

    def tdiff(x):
        a = np.take(x, hi, axis=t_axis)
        bq = np.take(x, lo, axis=t_axis)
        return (a - bq) * scale.reshape(scale.shape[0], *([1] * (x.ndim - t_axis - 1)))

    lin_w = tdiff(root)
    ang_w = quat.to_rotvec(quat.multiply(np.take(rq, hi, axis=t_axis),
                                         quat.conjugate(np.take(rq, lo, axis=t_axis))))
    ang_w = ang_w * scale.reshape(scale.shape[0], *([1] * (ang_w.ndim - t_axis - 1)))
    jv = tdiff(jp)

    inv = quat.conjugate(rq)
    key_w = body[..., key, :]
    key_b = quat.rotate(inv[..., None, :], key_w - root[..., None, :])
    return {
        "root": root, "quat": rq, "lin_b": quat.rotate(inv, lin_w),
        "ang_b": quat.rotate(inv, ang_w), "joint_pos": jp, "joint_vel": jv,
        "key_w": key_w, "key_b": key_b,
    }


def _gather(arrs: dict, idx: np.ndarray) -> ReferenceFrame:
    """Select per-env frames: arrs fields are (N, T, ...), idx is (N,)."""
    n = idx.shape[0]
    rows = np.arange(n)
    return ReferenceFrame(
        base_pos=arrs["root"][rows, idx],
        base_quat=arrs["quat"][rows, idx],
        base_lin_vel=arrs["lin_b"][rows, idx],
        base_ang_vel=arrs["ang_b"][rows, idx],
        joint_pos=arrs["joint_pos"][rows, idx],
        joint_vel=arrs["joint_vel"][rows, idx],
        key_body_pos_w=arrs["key_w"][rows, idx],
        key_body_pos_b=arrs["key_b"][rows, idx],
    )


class ClipRefProvider:
    """Replays fixed clips; env i follows clip clip_idx[i] from its start."""

    def __init__(self, clips: list[MotionClip], skel: Skeleton):
        self.skel = skel
        self.arrays = [feature_reference_arrays(c.features()[None], c.fps, skel)
                       for c in clips]
        self.lengths = np.array([len(c) for c in clips])
        self.clip_idx: np.ndarray | None = None
        self.offsets: np.ndarray | None = None

    def reset(self, clip_idx: np.ndarray, offsets: np.ndarray | None = None) -> None:
        self.clip_idx = np.asarray(clip_idx)
        self.offsets = (np.zeros(len(self.clip_idx), dtype=np.int64)
                        if offsets is None else np.asarray(offsets, dtype=np.int64))

    def frame(self, step: np.ndarray, offset: int = 0) -> ReferenceFrame:
        fields: dict[str, list] = {k: [] for k in
                                   ("root", "quat", "lin_b", "ang_b", "joint_pos",
                                    "joint_vel", "key_w", "key_b")}
        for i, ci in enumerate(self.clip_idx):
            t = int(min(step[i] + self.offsets[i] + offset, self.lengths[ci] - 1))
            for k in fields:
                fields[k].append(self.arrays[ci][k][0, t])
        return ReferenceFrame(
            base_pos=np.stack(fields["root"]), base_quat=np.stack(fields["quat"]),
            base_lin_vel=np.stack(fields["lin_b"]), base_ang_vel=np.stack(fields["ang_b"]),
            joint_pos=np.stack(fields["joint_pos"]), joint_vel=np.stack(fields["joint_vel"]),
            key_body_pos_w=np.stack(fields["key_w"]), key_body_pos_b=np.stack(fields["key_b"]))

    def replan_due(self, step: int) -> bool:
        return False


class GenRefProvider:
    """Receding-horizon references from a frozen denoiser.

    Windows are regenerated (K denoising steps, batched across envs) at
    the first control step at or after each multiple of REPLAN_PERIOD,
    conditioned on the two most recent robot frames, the egocentric
    height scan, and the straight-line heading to each env's goal.
    Conditioning inputs can carry extra inference noise.
    """

    def __init__(self, den: Denoiser, skel: Skeleton, fields: list[HeightField],
                 goals: np.ndarray, steps: int, rngs: list[np.random.Generator],
                 sigma_scan: float = 0.0, sigma_state: float = 0.0,
                 dt: float = 0.02):
        self.den = den
        self.skel = skel
        self.fields = fields
        self.goals = np.asarray(goals, dtype=np.float64)
        self.steps = steps
        self.rngs = rngs
        self.sigma_scan = sigma_scan
        self.sigma_state = sigma_state
        self.dt = dt
        n = len(fields)
        self.window_arrays: dict | None = None
        self.cursor = np.zeros(n, dtype=np.int64)
        self.next_replan = np.zeros(n)
        self.param_hash_at_start = den.param_hash()

    def replan_due(self, times: np.ndarray) -> np.ndarray:
        return times >= self.next_replan - 1e-9

    def replan(self, env_ids: np.ndarray, past_feats: np.ndarray,
               times: np.ndarray) -> None:
        """past_feats: (N_sel, 2, F) world-frame robot frames (t-dt, t)."""
        if env_ids.size == 0:
            return
        den = self.den
        j, b = self.skel.joint_count, self.skel.body_count
        h, f = den.horizon, den.feature_dim
        conds, anchors = [], []
        for k, i in enumerate(env_ids):
            anchor_frame = past_feats[k, 0]
            yaw = float(quat.yaw_of(quat.normalize(anchor_frame[3:7])))
            fldh = float(height_at(self.fields[i], anchor_frame[:2]))
            anchor = Anchor(float(anchor_frame[0]), float(anchor_frame[1]), yaw, fldh)
            past = canonicalize(past_feats[k], anchor, j, b)
            rng = self.rngs[i]
            scan = sample_scan(self.fields[i], anchor_frame[0:3], yaw, den.cfg.scan)
            if self.sigma_scan > 0:
                scan = scan + self.sigma_scan * rng.standard_normal(scan.shape)
            if self.sigma_state > 0:
                past = past + self.sigma_state * rng.standard_normal(past.shape)
            d = self.goals[i] - anchor_frame[:2]
            nd = np.linalg.norm(d)
            d = d / nd if nd > 1e-6 else np.array([np.cos(yaw), np.sin(yaw)])
            c, s = np.cos(-yaw), np.sin(-yaw)
            heading = np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]])
            heading /= np.linalg.norm(heading)
            conds.append(Condition(heading=heading, scan=scan, past=past))
            anchors.append(anchor)
        windows = self._sample_batch(conds, [self.rngs[i] for i in env_ids])
        world = np.stack([
            decanonicalize(windows[k], anchors[k], j, b) for k in range(len(env_ids))])
        arrs = feature_reference_arrays(world, 1.0 / self.dt, self.skel)
        if self.window_arrays is None:
            n = len(self.fields)
            self.window_arrays = {k: np.zeros((n,) + v.shape[1:]) for k, v in arrs.items()}
        for k, v in arrs.items():
            self.window_arrays[k][env_ids] = v
        self.cursor[env_ids] = 0
        self.next_replan[env_ids] = (np.floor(times[env_ids] / REPLAN_PERIOD + 1e-9) + 1.0) \
            * REPLAN_PERIOD

    def _sample_batch(self, conds: list[Condition],
                      rngs: list[np.random.Generator]) -> np.ndarray:
        """Strided sampler, vectorized across conditions (noise per env rng)."""
        den = self.den
        h, f = den.horizon, den.feature_dim
        n = len(conds)
        taus = sub_schedule(den.schedule, self.steps)
        abar = den.schedule.alpha_bars
        cond_vecs = np.stack([den._cond_vector(c) for c in conds])
        x = np.stack([r.standard_normal((h, f)) for r in rngs])
        x0n = x
        for si, t in enumerate(taus):
            flat = x.reshape(n, -1)
            temb = np.repeat(timestep_embedding(np.array([t])), n, axis=0)
            net_in = np.concatenate([flat, temb, cond_vecs], axis=-1)
            x0n = den.net.forward_np(net_in).reshape(n, h, f)
            if si + 1 < len(taus):
                tn = taus[si + 1]
                eps = np.stack([r.standard_normal((h, f)) for r in rngs])
                x = np.sqrt(abar[tn - 1]) * x0n + np.sqrt(1.0 - abar[tn - 1]) * eps
        return den.denormalize(x0n)

    def frame(self, step: np.ndarray, offset: int = 0) -> ReferenceFrame:
        idx = np.minimum(self.cursor + offset, self.den.horizon - 1)
        return _gather(self.window_arrays, idx)

    def advance(self, active: np.ndarray) -> None:
        self.cursor[active] = np.minimum(self.cursor[active] + 1, self.den.horizon - 1)
