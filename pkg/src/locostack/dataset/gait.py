"""Gait building blocks for motion synthesis: analytic leg IK on the
default humanoid's 5-joint legs, foot stance/swing scripts with
terrain-clearing lifts, and a step planner that walks the feet under a
moving root.

Stance feet are held at an exact world point, so their velocity is zero
by construction; swings use smoothstep blending (zero end velocity) and
a sine-squared lift bell sized to clear the terrain between footholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InfeasibleMotionError
from ..skeleton import Skeleton
from ..terrain import HeightField, height_at

L_THIGH = 0.30
L_SHANK = 0.30
HIP_LATERAL = 0.10
HIP_DROP = 0.05          # hip joints sit this far below the pelvis origin
REACH_MAX = 0.592        # leg extension margin below L_THIGH + L_SHANK
REACH_MIN = 0.08
SWING_TIME = 0.30
DOUBLE_SUPPORT = 0.10
SWING_CLEARANCE = 0.05
MIN_LIFT = 0.06
STAND_HEIGHT = 0.56      # pelvis above the support surface when standing
CROUCH_HEIGHT = 0.42


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def leg_ik(d_local: np.ndarray) -> tuple[float, float, float, float, float]:
    """Joint angles (hip_yaw, hip_roll, hip_pitch, knee, ankle_pitch) that
    place the ankle at d_local (hip-frame target, yaw already removed).

    Out-of-reach targets are clamped along the target direction.
    """
    dx, dy, dz = float(d_local[0]), float(d_local[1]), float(d_local[2])
    rho = float(np.hypot(dy, dz))
    if rho < 1e-9:
        rho, dy, dz = 1e-9, 0.0, -1e-9
    hip_roll = float(np.arctan2(dy, -dz))
    d = float(np.hypot(dx, rho))
    d_cl = float(np.clip(d, REACH_MIN, REACH_MAX))
    if d > 1e-9 and d_cl != d:
        scale = d_cl / d
        dx, rho = dx * scale, rho * scale
        d = d_cl
    cos_knee = (d * d - L_THIGH ** 2 - L_SHANK ** 2) / (2.0 * L_THIGH * L_SHANK)
    knee = float(np.arccos(np.clip(cos_knee, -1.0, 1.0)))
    alpha = float(np.arctan2(L_SHANK * np.sin(knee), L_THIGH + L_SHANK * np.cos(knee)))
    hip_pitch = float(np.arctan2(-dx, rho)) - alpha
    ankle = -(hip_pitch + knee)
    return 0.0, hip_roll, hip_pitch, knee, ankle


def leg_fk_check(angles) -> np.ndarray:
    """Hip-frame ankle position for the IK solution (used by tests)."""
    _, roll, pitch, knee, _ = angles
    x = -L_THIGH * np.sin(pitch) - L_SHANK * np.sin(pitch + knee)
    z = -L_THIGH * np.cos(pitch) - L_SHANK * np.cos(pitch + knee)
    cr, sr = np.cos(roll), np.sin(roll)
    return np.array([x, -z * sr, z * cr])


@dataclass
class Stance:
    t0: float
    t1: float
    point: np.ndarray  # world xyz, z on the terrain surface


@dataclass
class FootScript:
    stances: list[Stance] = field(default_factory=list)

    def add(self, t0: float, t1: float, point: np.ndarray) -> None:
        if self.stances and t0 < self.stances[-1].t1 - 1e-9:
            raise InfeasibleMotionError(
                f"stance at t={t0:.2f} overlaps the previous one ending {self.stances[-1].t1:.2f}")
        self.stances.append(Stance(t0, t1, np.asarray(point, dtype=np.float64)))

    def last_point(self) -> np.ndarray:
        return self.stances[-1].point

    def compile(self, fld: HeightField) -> "CompiledFoot":
        lifts = []
        for a, b in zip(self.stances[:-1], self.stances[1:]):
            lifts.append(_swing_lift(fld, a.point, b.point))
        return CompiledFoot(self.stances, lifts)


def _swing_lift(fld: HeightField, a: np.ndarray, b: np.ndarray) -> float:
    """Bell amplitude that clears the terrain between footholds."""
    us = np.linspace(0.0, 1.0, 41)[1:-1]
    s = smoothstep(us)
    xy = a[None, :2] + s[:, None] * (b[None, :2] - a[None, :2])
    z_lin = a[2] + s * (b[2] - a[2])
    ground = height_at(fld, xy)
    bell = np.sin(np.pi * us) ** 2
    need = (ground + SWING_CLEARANCE - z_lin) / np.maximum(bell, 0.15)
    return float(max(MIN_LIFT, need.max()))


@dataclass
class CompiledFoot:
    stances: list[Stance]
    lifts: list[float]

    def pos(self, t: float) -> np.ndarray:
        st = self.stances
        if t <= st[0].t1 or len(st) == 1:
            return st[0].point
        for k in range(len(st) - 1):
            a, b = st[k], st[k + 1]
            if t <= a.t1:
                return a.point
            if t < b.t0:
                u = (t - a.t1) / (b.t0 - a.t1)
                s = smoothstep(u)
                p = a.point + s * (b.point - a.point)
                p = p.copy()
                p[2] += self.lifts[k] * np.sin(np.pi * np.clip(u, 0.0, 1.0)) ** 2
                return p
        return st[-1].point

    def is_stance(self, t: float) -> bool:
        return any(s.t0 - 1e-9 <= t <= s.t1 + 1e-9 for s in self.stances)


class StepPlanner:
    """Plants alternating footsteps under a prescribed root path.

    root_xy(t) -> (2,), root_yaw(t) -> float. Footholds are placed a
    half-stance lead ahead of the hip line and optionally filtered
    (e.g. snapped to stair tread centers); z always comes from the terrain.
    """

    def __init__(self, fld: HeightField, foot_l: FootScript, foot_r: FootScript,
                 root_xy, root_yaw, foothold_filter=None,
                 swing_time: float = SWING_TIME, double_support: float = DOUBLE_SUPPORT):
        self.fld = fld
        self.feet = {"L": foot_l, "R": foot_r}
        self.root_xy = root_xy
        self.root_yaw = root_yaw
        self.filter = foothold_filter or (lambda xy: xy)
        self.swing_time = swing_time
        self.double_support = double_support

    def _plant_point(self, side: str, t_land: float, lead: float) -> np.ndarray:
        yaw = self.root_yaw(t_land)
        c, s = np.cos(yaw), np.sin(yaw)
        lat = HIP_LATERAL if side == "L" else -HIP_LATERAL
        xy = self.root_xy(t_land) + np.array([c * lead - s * lat, s * lead + c * lat])
        xy = self.filter(np.asarray(xy, dtype=np.float64))
        return np.array([xy[0], xy[1], float(height_at(self.fld, xy))])

    def walk(self, t0: float, t1: float, speed: float, first: str = "L",
             lead: float | None = None) -> float:
        """Alternate swings from t0 until t1; returns the actual end time."""
        cycle = 2.0 * (self.swing_time + self.double_support)
        if lead is None:
            lead = 0.5 * speed * (cycle - self.swing_time)
        t = t0
        side = first
        while t + self.swing_time <= t1 + 1e-9:
            foot = self.feet[side]
            t_land = t + self.swing_time
            foot.stances[-1].t1 = t  # lift off now
            # the new stance stays open; the next lift-off (or finalize) closes it
            foot.add(t_land, t_land + 1e9, self._plant_point(side, t_land, lead))
            t = t_land + self.double_support
            side = "R" if side == "L" else "L"
        return t

    def finalize(self, t_end: float) -> None:
        for foot in self.feet.values():
            foot.stances[-1].t1 = t_end


def stand_feet(fld: HeightField, xy: np.ndarray, yaw: float) -> tuple[np.ndarray, np.ndarray]:
    """Foot points for standing at a root xy/yaw."""
    c, s = np.cos(yaw), np.sin(yaw)
    out = []
    for lat in (HIP_LATERAL, -HIP_LATERAL):
        p = np.array([xy[0] - s * lat, xy[1] + c * lat])
        out.append(np.array([p[0], p[1], float(height_at(fld, p))]))
    return out[0], out[1]


class JointMap:
    """Joint indices of the default humanoid's named chains."""

    def __init__(self, skel: Skeleton):
        def j(link_name: str) -> int:
            return skel.index_of(link_name) - 1
        self.waist_yaw = j("waist_yaw_link")
        self.waist_pitch = j("torso_link")
        self.neck = j("head_link")
        self.leg = {
            "L": [j("left_hip_yaw_link"), j("left_hip_roll_link"), j("left_thigh_link"),
                  j("left_shank_link"), j("left_foot_link")],
            "R": [j("right_hip_yaw_link"), j("right_hip_roll_link"), j("right_thigh_link"),
                  j("right_shank_link"), j("right_foot_link")],
        }
        self.arm = {
            "L": [j("left_shoulder_pitch_link"), j("left_shoulder_roll_link"),
                  j("left_upper_arm_link"), j("left_forearm_link"), j("left_hand_link")],
            "R": [j("right_shoulder_pitch_link"), j("right_shoulder_roll_link"),
                  j("right_upper_arm_link"), j("right_forearm_link"), j("right_hand_link")],
        }
        self.hip_offset = {
            "L": np.array([0.0, HIP_LATERAL, -HIP_DROP]),
            "R": np.array([0.0, -HIP_LATERAL, -HIP_DROP]),
        }


def solve_leg(jm: JointMap, joints: np.ndarray, root_pos: np.ndarray, yaw: float,
              side: str, foot: np.ndarray) -> None:
    """Fill one leg's joints in-place so its ankle lands on the world point."""
    c, s = np.cos(yaw), np.sin(yaw)
    r_inv = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    hip_world = root_pos + r_inv.T @ jm.hip_offset[side]
    d_local = r_inv @ (foot - hip_world)
    angles = leg_ik(d_local)
    for idx, val in zip(jm.leg[side], angles):
        joints[idx] = val


def solve_legs(jm: JointMap, joints: np.ndarray, root_pos: np.ndarray, yaw: float,
               foot_l: np.ndarray, foot_r: np.ndarray) -> None:
    """Fill both legs' joints in-place."""
    solve_leg(jm, joints, root_pos, yaw, "L", foot_l)
    solve_leg(jm, joints, root_pos, yaw, "R", foot_r)


def stance_reach_ok(root_pos: np.ndarray, yaw: float, foot: np.ndarray,
                    side: str, margin: float = 0.004) -> bool:
    c, s = np.cos(yaw), np.sin(yaw)
    r_inv = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    off = np.array([0.0, HIP_LATERAL if side == "L" else -HIP_LATERAL, -HIP_DROP])
    hip_world = root_pos + r_inv.T @ off
    d = float(np.linalg.norm(foot - hip_world))
    return REACH_MIN + margin <= d <= REACH_MAX - margin
