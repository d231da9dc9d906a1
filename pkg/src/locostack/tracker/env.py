"""Reduced closed-loop tracker environment.

Desk-scale stand-in for full rigid-body simulation, vectorized over N
lockstep instances. The root is a rigid body with 3-d position, yaw,
and velocity; joints follow first-order lag toward the commanded
targets with velocity clamps, actuator noise, and implied torques
gain * (target - q). The root follows the reference root motion with a
fidelity that degrades with tracking error, and support comes from the
robot's own fk'd feet: climbing requires feet actually finding the
higher surface, walking into a face or deep foot penetration blocks
progress, and prolonged lack of support brings the robot down.

This is the documented fidelity gap versus contact physics: every
interface, observation, and reward is exact; only the force dynamics
are reduced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import quat
from ..errors import NumericFailure, ValidationError
from ..motion import FPS_DEFAULT
from ..rewards import (ActionHistory, Command, Limits, ReferenceFrame, RewardConfig,
                       RobotState, default_limits, reward_post, reward_pre)
from ..skeleton import Skeleton, default_humanoid, fk
from ..terrain import HeightField, height_at, sample_scan, ScanPattern
from ..dataset.gait import STAND_HEIGHT, JointMap, solve_legs


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 1.0 / FPS_DEFAULT
    joint_tau: float = 0.04
    joint_vel_limit: float = 20.0
    actuator_noise: float = 0.01
    torque_gain: float = 60.0
    err_filter: float = 0.15
    err_scale: float = 0.45          # filtered tracking error where following degrades
    disturb_vel: float = 0.55        # m/s of velocity noise per unit filtered error
    root_kp: float = 1.5             # 1/s pull toward the reference root position
    contact_above: float = 0.08      # foot may hover this far above the surface
    contact_below: float = 0.10      # or sink this far into it and still support
    stumble_pen: float = 0.15        # deeper foot penetration trips the robot
    min_clearance: float = 0.25
    max_clearance: float = 0.72
    wall_clearance: float = 0.22     # root cannot approach terrain closer than this
    flight_grace: float = 0.85       # s without support before gravity engages
    gravity: float = 9.81
    fall_height: float = 0.30
    timeout: float = 20.0
    goal_radius: float = 0.30
    history: int = 5
    action_scale: float = 0.5
    obs_noise: float = 0.0
    scan: ScanPattern = field(default_factory=ScanPattern)
    # training-only early termination on tracking loss (None disables; kept
    # off for evaluation episodes)
    track_err_limit: float | None = None   # mean |q - q*| rad, EMA-filtered
    pos_err_limit: float | None = None     # ||root - root*|| m
    term_grace: float = 0.3                # s after reset before it applies


@dataclass(frozen=True)
class InitRandomization:
    xy: float = 0.10
    yaw: float = 0.15
    joints: float = 0.05


FALL, OOB, TIMEOUT, GOAL, TRACK_LOST = 1, 2, 3, 4, 5  # termination codes


def default_pose(skel: Skeleton) -> np.ndarray:
    """Standing joint targets: legs from IK at stand height, arms relaxed."""
    jm = JointMap(skel)
    joints = np.zeros(skel.joint_count)
    root = np.array([0.0, 0.0, STAND_HEIGHT])
    solve_legs(jm, joints, root, 0.0,
               np.array([0.0, 0.10, 0.0]), np.array([0.0, -0.10, 0.0]))
    for side in ("L", "R"):
        joints[jm.arm[side][3]] = 0.45
    return joints


class TrackerEnv:
    """N lockstep environment instances on one terrain per instance."""

    def __init__(self, skel: Skeleton, fields: list[HeightField], cfg: EnvConfig,
                 goals: np.ndarray, seeds: list[int] | np.ndarray):
        self.skel = skel
        self.cfg = cfg
        self.fields = fields
        self.n = len(fields)
        self.goals = np.asarray(goals, dtype=np.float64).reshape(self.n, 2)
        self.rngs = [np.random.default_rng(int(s)) for s in seeds]
        self.limits = default_limits(skel.joint_count)
        self.default_pose = default_pose(skel)
        self.key_idx = list(skel.key_body_indices)
        self.foot_idx = list(skel.foot_indices)
        self.extents = np.array([f.extent() for f in fields])
        j = skel.joint_count
        self.obs_dim = (6 + 2 * j + 27) + cfg.history * (6 + 3 * j) + cfg.scan.size
        self._alloc()

    def _alloc(self) -> None:
        n, j = self.n, self.skel.joint_count
        self.root = np.zeros((n, 3))
        self.yaw = np.zeros(n)
        self.vel_w = np.zeros((n, 3))
        self.omega = np.zeros(n)
        self.q = np.zeros((n, j))
        self.qd = np.zeros((n, j))
        self.tau = np.zeros((n, j))
        self.err_ema = np.zeros(n)
        self.unsupported = np.zeros(n)
        self.fall_vel = np.zeros(n)
        self.time = np.zeros(n)
        self.step_count = np.zeros(n, dtype=np.int64)
        self.a_prev = np.tile(self.default_pose, (n, 1))
        self.a_prev2 = np.tile(self.default_pose, (n, 1))
        self.done = np.zeros(n, dtype=bool)
        self.term = np.zeros(n, dtype=np.int64)
        self.hist = np.zeros((n, self.cfg.history, 6 + 3 * j))
        # smoothed key-body ring for the acceleration estimate: coarse
        # second differences (taps 0.1 s apart) keep actuator jitter from
        # swamping genuine motion accelerations
        self.key_hist = np.zeros((n, 11, len(self.key_idx), 3))
        self.past_feats = np.zeros((n, 2, self.skel.feature_dim))

    # ---- reset ----------------------------------------------------------------------

    def reset(self, start_pose: np.ndarray, rand: InitRandomization,
              env_ids: np.ndarray | None = None) -> None:
        """start_pose: (N, 7 + J) root pos, root quat, joints per env."""
        ids = np.arange(self.n) if env_ids is None else env_ids
        j = self.skel.joint_count
        for i in ids:
            rng = self.rngs[i]
            pose = start_pose[i]
            self.root[i] = pose[0:3]
            self.root[i, 0:2] += rng.uniform(-rand.xy, rand.xy, 2)
            self.yaw[i] = quat.yaw_of(pose[3:7]) + rng.uniform(-rand.yaw, rand.yaw)
            self.q[i] = pose[7:7 + j] + rng.uniform(-rand.joints, rand.joints, j)
        self.vel_w[ids] = 0.0
        self.omega[ids] = 0.0
        self.qd[ids] = 0.0
        self.tau[ids] = 0.0
        self.err_ema[ids] = 0.0
        self.unsupported[ids] = 0.0
        self.fall_vel[ids] = 0.0
        self.time[ids] = 0.0
        self.step_count[ids] = 0
        self.a_prev[ids] = self.q[ids]
        self.a_prev2[ids] = self.q[ids]
        self.done[ids] = False
        self.term[ids] = 0
        self.hist[ids] = 0.0
        body = self.body_positions()
        for k in range(self.key_hist.shape[1]):
            self.key_hist[ids, k] = body[ids][:, self.key_idx]
        self.past_feats[ids] = self.frame_features()[ids, None, :]

    def body_positions(self) -> np.ndarray:
        return fk(self.skel, self.root, quat.from_yaw(self.yaw), self.q)

    def frame_features(self) -> np.ndarray:
        body = self.body_positions()
        return np.concatenate([self.root, quat.from_yaw(self.yaw), self.q,
                               body.reshape(self.n, -1)], axis=-1)

    def _field_groups(self) -> list[tuple[np.ndarray, HeightField]]:
        groups: dict[int, list[int]] = {}
        for i, f in enumerate(self.fields):
            groups.setdefault(id(f), []).append(i)
        return [(np.asarray(ids), self.fields[ids[0]]) for ids in groups.values()]

    def _heights(self, pts_xy: np.ndarray) -> np.ndarray:
        """Per-env terrain heights for (N, ..., 2) points, batched per field."""
        out = np.zeros(pts_xy.shape[:-1])
        for ids, fld in self._field_groups():
            out[ids] = height_at(fld, pts_xy[ids])
        return out

    def ground_under_root(self) -> np.ndarray:
        return self._heights(self.root[:, :2])

    # ---- step -----------------------------------------------------------------------

    def step(self, targets: np.ndarray, ref: ReferenceFrame,
             stage: str = "pre", cmd: Command | None = None,
             rew_cfg: RewardConfig = RewardConfig()) -> tuple[np.ndarray, np.ndarray, dict]:
        """Advance active envs one dt. Returns (reward, done, info)."""
        cfg = self.cfg
        n, j = self.n, self.skel.joint_count
        targets = np.asarray(targets, dtype=np.float64)
        if not np.all(np.isfinite(targets)):
            raise NumericFailure("non-finite action targets")
        # actuators saturate at the joint position limits
        targets = np.clip(targets, self.limits.joint_lower, self.limits.joint_upper)
        active = ~self.done

        noise = np.stack([r.standard_normal(j) for r in self.rngs])
        a_noisy = targets + cfg.actuator_noise * noise
        blend = 1.0 - np.exp(-cfg.dt / cfg.joint_tau)
        dq = np.clip(blend * (a_noisy - self.q),
                     -cfg.joint_vel_limit * cfg.dt, cfg.joint_vel_limit * cfg.dt)
        q_new = np.where(active[:, None], self.q + dq, self.q)
        self.qd = np.where(active[:, None], (q_new - self.q) / cfg.dt, 0.0)
        self.q = q_new
        self.tau = cfg.torque_gain * (targets - self.q)

        body = self.body_positions()
        feet = body[:, self.foot_idx]                      # (n, nf, 3)
        foot_h = self._heights(feet[..., :2])
        pen = foot_h - feet[..., 2]
        contact = (pen >= -cfg.contact_above) & (pen <= cfg.contact_below)
        stumble = np.any(pen > cfg.stumble_pen, axis=-1)
        supported = np.any(contact, axis=-1)
        support_h = np.where(contact, foot_h, -np.inf).max(axis=-1)

        # tracking error drives how faithfully the root follows the reference
        e_joint = np.mean(np.abs(self.q - ref.joint_pos), axis=-1)
        e_root = np.minimum(np.linalg.norm(self.root - ref.base_pos, axis=-1), 1.0)
        err = e_joint + 0.5 * e_root
        self.err_ema = np.where(active,
                                (1 - cfg.err_filter) * self.err_ema + cfg.err_filter * err,
                                self.err_ema)
        follow = np.exp(-(self.err_ema / cfg.err_scale) ** 2)

        ref_vel_w = quat.rotate(ref.base_quat, ref.base_lin_vel)
        ref_yaw = quat.yaw_of(ref.base_quat)
        ref_wz = quat.rotate(ref.base_quat, ref.base_ang_vel)[..., 2]
        vel_noise = np.stack([r.standard_normal(3) for r in self.rngs])
        v_cmd = follow[:, None] * (ref_vel_w + cfg.root_kp * (ref.base_pos - self.root)) \
            + cfg.disturb_vel * (self.err_ema * (1 - follow))[:, None] * vel_noise
        yaw_err = np.arctan2(np.sin(ref_yaw - self.yaw), np.cos(ref_yaw - self.yaw))
        w_cmd = follow * (ref_wz + cfg.root_kp * yaw_err) \
            + 0.5 * cfg.disturb_vel * self.err_ema * (1 - follow) \
            * np.stack([r.standard_normal() for r in self.rngs])

        new_xy = self.root[:, :2] + v_cmd[:, :2] * cfg.dt
        new_z = self.root[:, 2] + v_cmd[:, 2] * cfg.dt

        # vertical support band / falling when unsupported too long
        self.unsupported = np.where(supported, 0.0, self.unsupported + cfg.dt)
        self.fall_vel = np.where(supported, 0.0, self.fall_vel)
        falling = self.unsupported > cfg.flight_grace
        self.fall_vel = np.where(falling, self.fall_vel + cfg.gravity * cfg.dt, self.fall_vel)
        new_z = new_z - self.fall_vel * cfg.dt
        band_lo = support_h + cfg.min_clearance
        band_hi = support_h + cfg.max_clearance
        new_z = np.where(supported, np.clip(new_z, band_lo, band_hi), new_z)

        # horizontal blocking: stumbles and walls stop progress
        h_ahead = self._heights(new_xy)
        blocked = stumble | (h_ahead > new_z - cfg.wall_clearance)
        new_xy = np.where((blocked | ~active)[:, None], self.root[:, :2], new_xy)
        new_z = np.where(active, new_z, self.root[:, 2])

        old_root = self.root.copy()
        self.root = np.concatenate([new_xy, new_z[:, None]], axis=-1)
        self.vel_w = (self.root - old_root) / cfg.dt
        d_yaw = np.where(active, w_cmd * cfg.dt, 0.0)
        self.yaw = self.yaw + d_yaw
        self.omega = d_yaw / cfg.dt
        self.time = np.where(active, self.time + cfg.dt, self.time)
        self.step_count = self.step_count + active.astype(np.int64)

        # terminations
        ground = self.ground_under_root()
        fall = active & (self.root[:, 2] < ground + cfg.fall_height)
        e = self.extents
        inside = ((self.root[:, 0] >= e[:, 0] + 0.1) & (self.root[:, 0] <= e[:, 2] - 0.1)
                  & (self.root[:, 1] >= e[:, 1] + 0.1) & (self.root[:, 1] <= e[:, 3] - 0.1))
        oob = active & ~inside
        timeout = active & (self.time >= cfg.timeout)
        goal = active & (np.linalg.norm(self.root[:, :2] - self.goals, axis=-1)
                         <= cfg.goal_radius)
        lost = np.zeros(n, dtype=bool)
        if cfg.track_err_limit is not None:
            lost |= active & (self.time > cfg.term_grace) & (e_joint > cfg.track_err_limit)
        if cfg.pos_err_limit is not None:
            lost |= active & (self.time > cfg.term_grace) & \
                (np.linalg.norm(self.root - ref.base_pos, axis=-1) > cfg.pos_err_limit)
        for code, mask in ((GOAL, goal), (FALL, fall), (OOB, oob), (TIMEOUT, timeout),
                           (TRACK_LOST, lost)):
            newly = mask & (self.term == 0)
            self.term[newly] = code
        self.done = self.done | fall | oob | timeout | goal | lost

        # robot state for the reward suite; key-body positions are low-pass
        # filtered before differencing, otherwise actuator jitter at 50 Hz
        # (no inertia in the reduced dynamics) swamps the acceleration term
        body = self.body_positions()
        key_w = body[:, self.key_idx]
        smoothed = 0.75 * self.key_hist[:, 0] + 0.25 * key_w
        self.key_hist = np.roll(self.key_hist, 1, axis=1)
        self.key_hist[:, 0] = smoothed
        acc = (self.key_hist[:, 0] - 2 * self.key_hist[:, 5] + self.key_hist[:, 10]) \
            * (1.0 / (5 * cfg.dt)) ** 2
        base_q = quat.from_yaw(self.yaw)
        inv = quat.conjugate(base_q)
        state = RobotState(
            base_pos=self.root.copy(),
            base_quat=base_q,
            base_lin_vel=quat.rotate(inv, self.vel_w),
            base_ang_vel=np.stack([np.zeros(n), np.zeros(n), self.omega], axis=-1),
            joint_pos=self.q.copy(),
            joint_vel=self.qd.copy(),
            joint_torque=self.tau.copy(),
            key_body_pos_w=key_w,
            key_body_pos_b=quat.rotate(inv[:, None, :], key_w - self.root[:, None, :]),
            key_body_acc=acc,
        )
        history = ActionHistory(a_t=targets, a_prev=self.a_prev, a_prev2=self.a_prev2)
        if stage == "pre":
            reward = reward_pre(state, ref, self.limits, history, rew_cfg)
        else:
            if cmd is None:
                cmd = Command(heading=self._goal_heading())
            reward = reward_post(state, ref, self.limits, history, cmd, rew_cfg)
        reward = np.where(active, reward, 0.0)

        self.a_prev2 = self.a_prev
        self.a_prev = targets.copy()
        self.past_feats = np.roll(self.past_feats, 1, axis=1)
        self.past_feats[:, 0] = np.concatenate(
            [self.root, base_q, self.q, body.reshape(n, -1)], axis=-1)

        info = {"state": state, "terms": self.term.copy(), "stumble": stumble,
                "supported": supported, "follow": follow}
        return reward, self.done.copy(), info

    def force_done(self, ids: np.ndarray, code: int = TIMEOUT) -> None:
        self.term[ids] = np.where(self.term[ids] == 0, code, self.term[ids])
        self.done[ids] = True

    def _goal_heading(self) -> np.ndarray:
        d = self.goals - self.root[:, :2]
        nrm = np.linalg.norm(d, axis=-1, keepdims=True)
        fallback = np.stack([np.cos(self.yaw), np.sin(self.yaw)], axis=-1)
        return np.where(nrm > 1e-6, d / np.maximum(nrm, 1e-6), fallback)

    # ---- observations ----------------------------------------------------------------

    # fixed observation scales keep every channel O(1) for the tanh nets
    ANG_VEL_SCALE = 0.25
    JOINT_VEL_SCALE = 0.05
    LIN_VEL_SCALE = 0.5

    def observe(self, ref_next: ReferenceFrame) -> np.ndarray:
        cfg = self.cfg
        n, j = self.n, self.skel.joint_count
        proprio = np.concatenate([
            np.stack([np.zeros(n), np.zeros(n), self.omega * self.ANG_VEL_SCALE], axis=-1),
            np.tile(np.array([0.0, 0.0, -1.0]), (n, 1)),  # projected gravity (yaw-only root)
            self.q - self.default_pose, self.qd * self.JOINT_VEL_SCALE,
            self.a_prev - self.default_pose,
        ], axis=-1)
        if cfg.obs_noise > 0:
            noise = np.stack([r.standard_normal(proprio.shape[-1]) for r in self.rngs])
            proprio = proprio + cfg.obs_noise * noise
        self.hist = np.roll(self.hist, 1, axis=1)
        self.hist[:, 0] = proprio
        scan = np.zeros((n, cfg.scan.size))
        for ids, fld in self._field_groups():
            scan[ids] = sample_scan(fld, self.root[ids], self.yaw[ids], cfg.scan)
        if cfg.obs_noise > 0:
            noise = np.stack([r.standard_normal(scan.shape[-1]) for r in self.rngs])
            scan = scan + cfg.obs_noise * noise
        ref_slice = np.concatenate([
            ref_next.base_lin_vel * self.LIN_VEL_SCALE,
            ref_next.base_ang_vel * self.ANG_VEL_SCALE,
            ref_next.joint_pos - self.default_pose,
            ref_next.joint_vel * self.JOINT_VEL_SCALE,
            ref_next.key_body_pos_b.reshape(n, -1),
        ], axis=-1)
        # history is stored newest-first; emit oldest-first
        hist_flat = self.hist[:, ::-1].reshape(n, -1)
        return np.concatenate([ref_slice, hist_flat, scan], axis=-1)

    def observe_peek(self, ref_next: ReferenceFrame) -> np.ndarray:
        """observe() without advancing the history buffer (bootstrap values)."""
        saved = self.hist.copy()
        states = [r.bit_generator.state for r in self.rngs]
        obs = self.observe(ref_next)
        self.hist = saved
        for r, s in zip(self.rngs, states):
            r.bit_generator.state = s
        return obs
