"""Tracker reward suite.

Six tracking terms (positive, each capped at its weight), seven
regularization penalties (non-positive), and a heading task term. The
pre-training return is tracking + regularization; fine-tuning adds the
task term. All functions are pure and broadcast over leading batch
dimensions of the state arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import ValidationError


@dataclass(frozen=True)
class RobotState:
    """Instantaneous robot quantities (leading batch dims allowed)."""
    base_pos: np.ndarray        # (..., 3) world, m
    base_quat: np.ndarray       # (..., 4) unit
    base_lin_vel: np.ndarray    # (..., 3) base frame, m/s
    base_ang_vel: np.ndarray    # (..., 3) base frame, rad/s
    joint_pos: np.ndarray       # (..., J) rad
    joint_vel: np.ndarray       # (..., J) rad/s
    joint_torque: np.ndarray    # (..., J) N*m
    key_body_pos_w: np.ndarray  # (..., 9, 3) world, m
    key_body_pos_b: np.ndarray  # (..., 9, 3) base frame, m
    key_body_acc: np.ndarray    # (..., 9, 3) world, m/s^2
    joint_acc: np.ndarray | None = None  # (..., J) rad/s^2; carried but unused by any term


@dataclass(frozen=True)
class ReferenceFrame:
    """Starred counterparts of the tracked quantities."""
    base_pos: np.ndarray
    base_quat: np.ndarray
    base_lin_vel: np.ndarray
    base_ang_vel: np.ndarray
    joint_pos: np.ndarray
    joint_vel: np.ndarray
    key_body_pos_w: np.ndarray
    key_body_pos_b: np.ndarray


@dataclass(frozen=True)
class Limits:
    joint_lower: np.ndarray  # (J,) rad
    joint_upper: np.ndarray  # (J,) rad
    joint_vel: np.ndarray    # (J,) rad/s, > 0
    torque: np.ndarray       # (J,) N*m, > 0

    def __post_init__(self):
        if np.any(self.joint_lower >= self.joint_upper):
            raise ValidationError("joint limits need lower < upper per joint")
        if np.any(self.joint_vel <= 0) or np.any(self.torque <= 0):
            raise ValidationError("velocity/torque limits must be positive")


@dataclass(frozen=True)
class ActionHistory:
    a_t: np.ndarray       # (..., J) target joint positions, rad
    a_prev: np.ndarray
    a_prev2: np.ndarray


@dataclass(frozen=True)
class Command:
    heading: np.ndarray   # (..., 2) unit, world horizontal plane


@dataclass(frozen=True)
class RewardConfig:
    task_speed_eps: float = 0.05      # m/s guard below which the task term is 0
    literal_one_sided: bool = False   # penalize only upper-side limit violations
    quat_error: str = "rotvec"        # rotvec | imaginary | geodesic


def _sq(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1)


def _quat_err_sq(q: np.ndarray, q_ref: np.ndarray, mode: str) -> np.ndarray:
    if mode == "rotvec":
        return _sq(quat.relative_rotvec(q, q_ref))
    if mode == "imaginary":
        rel = quat.multiply(q, quat.conjugate(q_ref))
        rel = np.where(rel[..., :1] < 0.0, -rel, rel)
        return _sq(rel[..., 1:])
    if mode == "geodesic":
        return quat.geodesic_angle(q, q_ref) ** 2
    raise ValidationError(f"unknown quat_error mode {mode!r}")


# ---- tracking terms ------------------------------------------------------------


def r_base_pose(state: RobotState, ref: ReferenceFrame,
                cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    pos_err = _sq(state.base_pos - ref.base_pos)
    rot_err = _quat_err_sq(state.base_quat, ref.base_quat, cfg.quat_error)
    return 3.0 * np.exp(-4.0 * pos_err - rot_err)


def r_base_vel(state: RobotState, ref: ReferenceFrame) -> np.ndarray:
    return np.exp(-_sq(state.base_lin_vel - ref.base_lin_vel)
                  - 0.1 * _sq(state.base_ang_vel - ref.base_ang_vel))


def r_joint_pos(state: RobotState, ref: ReferenceFrame) -> np.ndarray:
    return 2.5 * np.exp(-2.0 * np.sum(0.25 * (state.joint_pos - ref.joint_pos) ** 2, axis=-1))


def r_joint_vel(state: RobotState, ref: ReferenceFrame) -> np.ndarray:
    return 0.5 * np.exp(-2.0 * np.sum(0.01 * (state.joint_vel - ref.joint_vel) ** 2, axis=-1))


def r_body_pos_base(state: RobotState, ref: ReferenceFrame) -> np.ndarray:
    return 2.0 * np.exp(-np.sum(_sq(state.key_body_pos_b - ref.key_body_pos_b), axis=-1))


def r_body_pos_world(state: RobotState, ref: ReferenceFrame) -> np.ndarray:
    return np.exp(-np.sum(_sq(state.key_body_pos_w - ref.key_body_pos_w), axis=-1))


# ---- regularization terms --------------------------------------------------------


def r_action_rate1(history: ActionHistory) -> np.ndarray:
    return -0.1 * np.sum((history.a_t - history.a_prev) ** 2, axis=-1)


def r_action_rate2(history: ActionHistory) -> np.ndarray:
    return -0.05 * np.sum((history.a_t - 2.0 * history.a_prev + history.a_prev2) ** 2, axis=-1)


def _limit_excess(value: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                  one_sided: bool) -> np.ndarray:
    over = np.maximum(value - upper, 0.0)
    if one_sided:
        return over
    return over + np.maximum(lower - value, 0.0)


def r_joint_pos_limits(state: RobotState, limits: Limits,
                       cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    excess = _limit_excess(state.joint_pos, limits.joint_lower, limits.joint_upper,
                           cfg.literal_one_sided)
    return -10.0 * np.sum(excess, axis=-1)


def r_joint_vel_limits(state: RobotState, limits: Limits,
                       cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    v = state.joint_vel if cfg.literal_one_sided else np.abs(state.joint_vel)
    return -np.sum(np.maximum(v - limits.joint_vel, 0.0), axis=-1)


def r_torque_limits(state: RobotState, limits: Limits,
                    cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    t = state.joint_torque if cfg.literal_one_sided else np.abs(state.joint_torque)
    return -0.001 * np.sum(np.maximum(t - limits.torque, 0.0), axis=-1)


def r_torque(state: RobotState) -> np.ndarray:
    return -1e-5 * np.sum(state.joint_torque ** 2, axis=-1)


def r_body_acc(state: RobotState) -> np.ndarray:
    return -0.01 * np.sum(_sq(state.key_body_acc), axis=-1)


# ---- task term ---------------------------------------------------------------------


def r_task(state: RobotState, cmd: Command, base_quat_world_vel: np.ndarray | None = None,
           cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    """Cosine between the world horizontal velocity and the commanded heading.

    The base-frame velocity is rotated to world via the state quaternion
    unless the caller passes the world velocity directly.
    """
    if base_quat_world_vel is None:
        v_world = quat.rotate(state.base_quat, state.base_lin_vel)
    else:
        v_world = np.asarray(base_quat_world_vel, dtype=np.float64)
    v_xy = v_world[..., :2]
    speed = np.linalg.norm(v_xy, axis=-1)
    safe = np.where(speed >= cfg.task_speed_eps, speed, 1.0)
    cos = np.sum(v_xy * cmd.heading, axis=-1) / safe
    return np.where(speed >= cfg.task_speed_eps, cos, 0.0)


# ---- aggregates ---------------------------------------------------------------------

MIMIC_ROWS = ("base_pose", "base_vel", "joint_pos", "joint_vel", "body_pos_base", "body_pos_world")
REG_ROWS = ("action_rate1", "action_rate2", "joint_pos_limits", "joint_vel_limits",
            "torque_limits", "torque", "body_acc")


def reward_rows(state: RobotState, ref: ReferenceFrame, limits: Limits,
                history: ActionHistory, cfg: RewardConfig = RewardConfig()) -> dict[str, np.ndarray]:
    return {
        "base_pose": r_base_pose(state, ref, cfg),
        "base_vel": r_base_vel(state, ref),
        "joint_pos": r_joint_pos(state, ref),
        "joint_vel": r_joint_vel(state, ref),
        "body_pos_base": r_body_pos_base(state, ref),
        "body_pos_world": r_body_pos_world(state, ref),
        "action_rate1": r_action_rate1(history),
        "action_rate2": r_action_rate2(history),
        "joint_pos_limits": r_joint_pos_limits(state, limits, cfg),
        "joint_vel_limits": r_joint_vel_limits(state, limits, cfg),
        "torque_limits": r_torque_limits(state, limits, cfg),
        "torque": r_torque(state),
        "body_acc": r_body_acc(state),
    }


def r_mimic(state, ref, cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    return (r_base_pose(state, ref, cfg) + r_base_vel(state, ref)
            + r_joint_pos(state, ref) + r_joint_vel(state, ref)
            + r_body_pos_base(state, ref) + r_body_pos_world(state, ref))


def r_reg(state, limits, history, cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    return (r_action_rate1(history) + r_action_rate2(history)
            + r_joint_pos_limits(state, limits, cfg)
            + r_joint_vel_limits(state, limits, cfg)
            + r_torque_limits(state, limits, cfg)
            + r_torque(state) + r_body_acc(state))


def reward_pre(state: RobotState, ref: ReferenceFrame, limits: Limits,
               history: ActionHistory, cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    """Pre-training return: tracking + regularization."""
    return r_mimic(state, ref, cfg) + r_reg(state, limits, history, cfg)


def reward_post(state: RobotState, ref: ReferenceFrame, limits: Limits,
                history: ActionHistory, cmd: Command,
                cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    """Fine-tuning return: tracking + regularization + heading task."""
    return reward_pre(state, ref, limits, history, cfg) + r_task(state, cmd, cfg=cfg)


def default_limits(joint_count: int) -> Limits:
    return Limits(
        joint_lower=np.full(joint_count, -2.8),
        joint_upper=np.full(joint_count, 2.8),
        joint_vel=np.full(joint_count, 20.0),
        torque=np.full(joint_count, 80.0),
    )
