"""Keyframe-spline motion synthesis for the primitive skill library.

Each skill template plans a root path and footstep script on its nominal
terrain, solves the legs analytically, and assembles fk-consistent
frames at 50 Hz. Stance feet are pinned to exact world points on the
surface, so contact constraints (no sliding, no penetration) hold by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import quat
from ..errors import InfeasibleMotionError
from ..motion import FPS_DEFAULT, MotionClip, MotionFrame
from ..skeleton import Skeleton, default_humanoid
from ..terrain import HeightField, TerrainSpec, generate, height_at
from .gait import (CROUCH_HEIGHT, DOUBLE_SUPPORT, REACH_MAX, STAND_HEIGHT, SWING_TIME,
                   FootScript, JointMap, Stance, StepPlanner, smoothstep, solve_legs,
                   stance_reach_ok, stand_feet)

SKILLS = ("walk", "turn", "climb_up", "jump_down", "vault", "stairs_up", "stairs_down")

# obstacle-height coverage of the synthetic library, m
COVERAGE = {
    "climb_up": (0.35, 0.75),
    "jump_down": (0.35, 0.75),
    "vault": (0.25, 0.45),
    "stairs_up": (0.15, 0.20),
    "stairs_down": (0.15, 0.20),
}
MAX_CLIMB = 0.80  # beyond this the leap template cannot recover leg reach


@dataclass(frozen=True)
class PrimitiveParams:
    skill: str
    obstacle_height: float = 0.0
    obstacle_width: float = 0.0   # box depth / hurdle thickness / stair tread width
    steps: int = 4                # stair count
    speed: float = 0.8            # approach speed, m/s
    duration: float = 3.0
    turn_rate: float = 0.6        # rad/s, turn skill only

    def validate(self) -> None:
        if self.skill not in SKILLS:
            raise InfeasibleMotionError(f"unknown skill {self.skill!r}")
        if self.skill in COVERAGE:
            lo, hi = COVERAGE[self.skill]
            if not lo <= self.obstacle_height <= hi:
                raise InfeasibleMotionError(
                    f"{self.skill} height {self.obstacle_height:.2f} outside coverage [{lo}, {hi}]")
        if self.obstacle_height > MAX_CLIMB:
            raise InfeasibleMotionError(
                f"obstacle {self.obstacle_height:.2f} m exceeds leg-reach limit {MAX_CLIMB} m")
        if not 0.2 <= self.speed <= 1.4:
            raise InfeasibleMotionError(f"approach speed {self.speed} outside [0.2, 1.4] m/s")
        if not 1.0 <= self.duration <= 10.0:
            raise InfeasibleMotionError(f"duration {self.duration} outside [1, 10] s")
        if self.skill.startswith("stairs") and self.steps < 2:
            raise InfeasibleMotionError("stair skills need at least 2 steps")


def _walk_height(speed: float) -> float:
    lead = 0.28 * speed + 0.05
    return min(STAND_HEIGHT, float(np.sqrt((REACH_MAX - 0.015) ** 2 - lead ** 2)) + 0.03)


def _stairs_height(step_h: float) -> float:
    return float(np.clip(np.sqrt((REACH_MAX - 0.01) ** 2 - 0.31 ** 2) + 0.05
                         - step_h - 0.02, 0.30, STAND_HEIGHT - 0.05))


def nominal_terrain(params: PrimitiveParams) -> TerrainSpec:
    """The terrain a primitive is synthesized against."""
    p = params
    appr = _approach_distance(p)
    if p.skill in ("walk", "turn"):
        return TerrainSpec(kind="flat")
    if p.skill == "climb_up":
        depth = p.obstacle_width if p.obstacle_width > 0 else 1.8
        return TerrainSpec(kind="box", height=p.obstacle_height, width=depth,
                           start_x=appr + 0.42)
    if p.skill == "jump_down":
        depth = p.obstacle_width if p.obstacle_width > 0 else 2.4
        return TerrainSpec(kind="box", height=p.obstacle_height, width=depth, start_x=0.6)
    if p.skill == "vault":
        thick = p.obstacle_width if p.obstacle_width > 0 else 0.2
        return TerrainSpec(kind="hurdle", height=p.obstacle_height, width=thick,
                           start_x=appr + 0.40)
    if p.skill == "stairs_up":
        w = p.obstacle_width if p.obstacle_width > 0 else 0.30
        return TerrainSpec(kind="stairs", height=p.obstacle_height, width=w,
                           steps=p.steps, start_x=appr + 0.30)
    if p.skill == "stairs_down":
        w = p.obstacle_width if p.obstacle_width > 0 else 0.30
        return TerrainSpec(kind="stairs", height=p.obstacle_height, width=w,
                           steps=p.steps, direction=-1, start_x=appr + 0.30)
    raise InfeasibleMotionError(f"unknown skill {p.skill!r}")


_CORE_TIME = {"climb_up": 2.2, "jump_down": 2.1, "vault": 2.3,
              "stairs_up": 4.5, "stairs_down": 4.5}


def _approach_distance(p: PrimitiveParams) -> float:
    if p.skill in ("walk", "turn"):
        return 0.0
    t_appr = float(np.clip(p.duration - _CORE_TIME[p.skill], 1.0, 4.0))
    return t_appr * p.speed


# ---- script assembly ---------------------------------------------------------------


class MotionScript:
    """Accumulates root keyframes, foot stances, and arm-reach windows."""

    def __init__(self, fld: HeightField, start_xy: np.ndarray, yaw: float, z: float):
        self.fld = fld
        self.keys: list[tuple[float, np.ndarray, float, str]] = [
            (0.0, np.array([start_xy[0], start_xy[1], z]), yaw, "smooth")]
        fl, fr = stand_feet(fld, np.asarray(start_xy), yaw)
        self.foot_l = FootScript([Stance(0.0, 1e9, fl)])
        self.foot_r = FootScript([Stance(0.0, 1e9, fr)])
        self.reach_windows: list[tuple[float, float]] = []
        self.flight_windows: list[tuple[float, float]] = []

    # -- root channel --

    @property
    def t(self) -> float:
        return self.keys[-1][0]

    def state(self) -> tuple[np.ndarray, float]:
        return self.keys[-1][1].copy(), self.keys[-1][2]

    def move(self, dt: float, x=None, y=None, z=None, yaw=None, mode: str = "smooth") -> None:
        pos, yw = self.state()
        pos[0] = pos[0] if x is None else x
        pos[1] = pos[1] if y is None else y
        pos[2] = pos[2] if z is None else z
        yw = yw if yaw is None else yaw
        self.keys.append((self.t + dt, pos, yw, mode))

    def hold(self, dt: float) -> None:
        self.move(dt)

    def root_at(self, t: float) -> tuple[np.ndarray, float]:
        keys = self.keys
        if t <= keys[0][0]:
            return keys[0][1].copy(), keys[0][2]
        for (t0, p0, y0, _), (t1, p1, y1, mode) in zip(keys[:-1], keys[1:]):
            if t <= t1 + 1e-12:
                u = (t - t0) / max(t1 - t0, 1e-9)
                s = np.clip(u, 0.0, 1.0) if mode == "linear" else smoothstep(u)
                return p0 + s * (p1 - p0), y0 + s * (y1 - y0)
        return keys[-1][1].copy(), keys[-1][2]

    # -- feet --

    def planner(self, foothold_filter=None, swing=SWING_TIME, ds=DOUBLE_SUPPORT) -> StepPlanner:
        return StepPlanner(self.fld, self.foot_l, self.foot_r,
                           lambda t: self.root_at(t)[0][:2],
                           lambda t: self.root_at(t)[1],
                           foothold_filter, swing, ds)

    def settle_feet(self, swing: float = 0.26) -> None:
        """Step each foot (if displaced) to its stand point under the root."""
        pos, yaw = self.state()
        fl, fr = stand_feet(self.fld, pos[:2], yaw)
        for foot, target in ((self.foot_l, fl), (self.foot_r, fr)):
            if np.linalg.norm(foot.last_point()[:2] - target[:2]) < 0.04:
                continue
            t0 = self.t
            foot.stances[-1].t1 = t0
            foot.add(t0 + swing, 1e9, target)
            self.hold(swing + 0.06)

    def leap(self, dt: float, to_xy: np.ndarray, to_z: float,
             land_l: np.ndarray, land_r: np.ndarray, rise_first: bool = True,
             reach_arms: bool = True) -> None:
        """Flight phase: both feet swing to new footholds while the root
        travels; with rise_first the vertical motion leads the horizontal."""
        t0 = self.t
        pos, yaw = self.state()
        self.foot_l.stances[-1].t1 = t0
        self.foot_r.stances[-1].t1 = t0
        self.flight_windows.append((t0, t0 + dt))
        if reach_arms:
            self.reach_windows.append((t0 - 0.15, t0 + dt + 0.15))
        if rise_first and to_z > pos[2]:
            mid_xy = pos[:2] + 0.30 * (np.asarray(to_xy) - pos[:2])
            self.move(0.5 * dt, x=mid_xy[0], y=mid_xy[1], z=to_z, mode="smooth")
            self.move(0.5 * dt, x=to_xy[0], y=to_xy[1], z=to_z, mode="smooth")
        else:
            self.move(dt, x=to_xy[0], y=to_xy[1], z=to_z, mode="smooth")
        self.foot_l.add(t0 + dt - 0.04, 1e9, land_l)
        self.foot_r.add(t0 + dt, 1e9, land_r)
        self.hold(0.04)

    def finish(self) -> None:
        self.foot_l.stances[-1].t1 = self.t + 1.0
        self.foot_r.stances[-1].t1 = self.t + 1.0


def _assemble(skel: Skeleton, jm: JointMap, script: MotionScript, label: str,
              arm_amp: float, cadence: float, fps: float = FPS_DEFAULT) -> MotionClip:
    n = int(round(script.t * fps)) + 1
    foot_l = script.foot_l.compile(script.fld)
    foot_r = script.foot_r.compile(script.fld)
    frames = []
    for i in range(n):
        t = i / fps
        pos, yaw = script.root_at(t)
        joints = np.zeros(skel.joint_count)
        fl = foot_l.pos(t)
        fr = foot_r.pos(t)
        for side, foot, comp in (("L", fl, foot_l), ("R", fr, foot_r)):
            if comp.is_stance(t) and not stance_reach_ok(pos, yaw, foot, side):
                raise InfeasibleMotionError(
                    f"{label}: stance foot out of reach at t={t:.2f} (root z {pos[2]:.2f})")
        solve_legs(jm, joints, pos, yaw, fl, fr)
        _set_arms(jm, joints, t, script, arm_amp, cadence)
        frames.append(MotionFrame.from_pose(skel, pos, quat.from_yaw(yaw), joints))
    return MotionClip(fps=fps, frames=frames, label=label)


def _set_arms(jm: JointMap, joints: np.ndarray, t: float, script: MotionScript,
              amp: float, cadence: float) -> None:
    swing = amp * np.sin(2.0 * np.pi * cadence * t)
    reach = 0.0
    for (t0, t1) in script.reach_windows:
        if t0 <= t <= t1:
            u = min((t - t0) / 0.2, (t1 - t) / 0.2, 1.0)
            reach = max(reach, float(smoothstep(u)))
    for side, sgn in (("L", 1.0), ("R", -1.0)):
        sp, sr, sy, el, wr = jm.arm[side]
        joints[sp] = (1.0 - reach) * sgn * swing + reach * -1.1
        joints[sr] = sgn * 0.08
        joints[el] = (1.0 - reach) * 0.45 + reach * 0.25
        joints[wr] = 0.0


# ---- skill templates ----------------------------------------------------------------


def synth_with_terrain(params: PrimitiveParams, rng: np.random.Generator,
                       skel: Skeleton | None = None) -> tuple[MotionClip, TerrainSpec, HeightField]:
    """Synthesize a primitive clip plus its nominal terrain."""
    params.validate()
    skel = skel or default_humanoid()
    jm = JointMap(skel)
    spec = nominal_terrain(params)
    fld = generate(spec, np.random.default_rng(0))
    arm_amp = float(rng.uniform(0.18, 0.30))
    cadence = 1.0 / (2.0 * (SWING_TIME + DOUBLE_SUPPORT))
    builder = {
        "walk": _build_walk, "turn": _build_turn, "climb_up": _build_climb,
        "jump_down": _build_jump_down, "vault": _build_vault,
        "stairs_up": _build_stairs, "stairs_down": _build_stairs,
    }[params.skill]
    script = builder(params, fld, spec, rng)
    script.finish()
    clip = _assemble(skel, jm, script, params.skill, arm_amp, cadence)
    return clip, spec, fld


def synth_clip(params: PrimitiveParams, rng: np.random.Generator,
               skel: Skeleton | None = None) -> MotionClip:
    clip, _, _ = synth_with_terrain(params, rng, skel)
    return clip


def _stagger_start(script: MotionScript, speed: float, yaw: float) -> None:
    """Pre-position the feet mid-stride so a constant-speed gait starts in
    its steady state at t = 0."""
    c, s = np.cos(yaw), np.sin(yaw)
    for foot, fwd, lat in ((script.foot_l, 0.17 * speed, 0.10),
                           (script.foot_r, -0.20 * speed, -0.10)):
        xy = script.keys[0][1][:2] + np.array([c * fwd - s * lat, s * fwd + c * lat])
        foot.stances[0].point = np.array([xy[0], xy[1], float(height_at(script.fld, xy))])


def _build_walk(p: PrimitiveParams, fld, spec, rng) -> MotionScript:
    v = p.speed * float(rng.uniform(0.995, 1.005))
    script = MotionScript(fld, np.zeros(2), 0.0, _walk_height(p.speed))
    _stagger_start(script, v, 0.0)
    script.move(p.duration, x=v * p.duration, mode="linear")
    planner = script.planner()
    planner.walk(0.02, p.duration + 1.0, v, first="R")
    return script


def _build_turn(p: PrimitiveParams, fld, spec, rng) -> MotionScript:
    rate = p.turn_rate if p.turn_rate != 0 else 0.6
    v = max(p.speed, 0.3)
    script = MotionScript(fld, np.zeros(2), 0.0, _walk_height(v))
    _stagger_start(script, v, 0.0)
    # integrate the arc as a dense polyline of linear keys
    steps = max(int(p.duration / 0.1), 2)
    dt = p.duration / steps
    pos, yaw = script.state()
    x, y = pos[0], pos[1]
    for _ in range(steps):
        yaw += rate * dt
        x += v * np.cos(yaw) * dt
        y += v * np.sin(yaw) * dt
        script.move(dt, x=x, y=y, yaw=yaw, mode="linear")
    planner = script.planner()
    planner.walk(0.02, p.duration + 1.0, v, first="R")
    return script


RAMP_TIME = 0.5  # speed-up / slow-down time of approach walks


def _walk_approach(script: MotionScript, x_stop: float, speed: float) -> None:
    """Walk straight to x_stop with trapezoidal speed so stance feet stay
    in reach from the standing start, then settle both feet."""
    pos, _ = script.state()
    dist = x_stop - pos[0]
    if dist < 0.08:
        return
    z_ground = pos[2] - STAND_HEIGHT
    speed = min(speed, max(0.35, dist / (2.0 * RAMP_TIME)))
    script.move(0.22, z=z_ground + _walk_height(speed))
    t_total = dist / speed + RAMP_TIME  # trapezoid with RAMP_TIME/2 lost per end
    t0 = script.t
    n_keys = max(int(np.ceil(t_total / 0.08)), 4)
    x = pos[0]
    for k in range(1, n_keys + 1):
        t = t_total * k / n_keys
        tp = t_total * (k - 1) / n_keys
        v0 = speed * min(tp / RAMP_TIME, 1.0, max((t_total - tp) / RAMP_TIME, 0.0))
        v1 = speed * min(t / RAMP_TIME, 1.0, max((t_total - t) / RAMP_TIME, 0.0))
        x += 0.5 * (v0 + v1) * (t - tp)
        script.move(t - tp, x=min(x, x_stop), mode="linear")
    planner = script.planner()
    planner.walk(t0 + 0.02, script.t, speed)
    script.settle_feet()


def _build_climb(p: PrimitiveParams, fld, spec: TerrainSpec, rng) -> MotionScript:
    h = p.obstacle_height
    face = spec.start_x
    script = MotionScript(fld, np.zeros(2), 0.0, STAND_HEIGHT)
    script.hold(0.2)
    _walk_approach(script, face - 0.42, p.speed)
    script.move(0.3, z=CROUCH_HEIGHT)
    land_l = np.array([face + 0.17, 0.10, float(height_at(fld, [face + 0.17, 0.10]))])
    land_r = np.array([face + 0.33, -0.10, float(height_at(fld, [face + 0.33, -0.10]))])
    script.leap(0.5, np.array([face + 0.26, 0.0]), h + 0.47, land_l, land_r)
    script.move(0.35, x=face + 0.40, z=h + STAND_HEIGHT)
    script.settle_feet()
    script.hold(0.3)
    return script


def _build_jump_down(p: PrimitiveParams, fld, spec: TerrainSpec, rng) -> MotionScript:
    h = p.obstacle_height
    edge = spec.start_x + spec.width  # far face of the launch box
    script = MotionScript(fld, np.array([1.0, 0.0]), 0.0, h + STAND_HEIGHT)
    script.hold(0.2)
    _walk_approach(script, edge - 0.38, min(p.speed, 0.7))
    script.move(0.25, z=h + CROUCH_HEIGHT + 0.02)
    land_l = np.array([edge + 0.38, 0.10, float(height_at(fld, [edge + 0.38, 0.10]))])
    land_r = np.array([edge + 0.54, -0.10, float(height_at(fld, [edge + 0.54, -0.10]))])
    # hold altitude until the trailing knee clears the box edge, then drop
    t0 = script.t
    script.foot_l.stances[-1].t1 = t0
    script.foot_r.stances[-1].t1 = t0
    script.flight_windows.append((t0, t0 + 0.50))
    script.reach_windows.append((t0 - 0.15, t0 + 0.65))
    script.move(0.25, x=edge + 0.35, z=h + CROUCH_HEIGHT)
    script.move(0.25, x=edge + 0.58, z=0.50)
    script.foot_l.add(script.t - 0.04, 1e9, land_l)
    script.foot_r.add(script.t, 1e9, land_r)
    script.hold(0.04)
    script.move(0.35, x=edge + 0.60, z=STAND_HEIGHT)
    script.settle_feet()
    script.hold(0.3)
    return script


def _build_vault(p: PrimitiveParams, fld, spec: TerrainSpec, rng) -> MotionScript:
    h = p.obstacle_height
    face = spec.start_x
    thick = spec.width if spec.width > 0 else 0.2
    script = MotionScript(fld, np.zeros(2), 0.0, STAND_HEIGHT)
    script.hold(0.2)
    _walk_approach(script, face - 0.42, p.speed)
    script.move(0.25, z=CROUCH_HEIGHT + 0.06)
    apex = max(STAND_HEIGHT + 0.10, h + 0.52)
    beyond = face + thick
    # KNEE_BUFFER: keep the root at apex while any leg segment can still be
    # over the hurdle (knees reach ~0.35 m fore/aft of the hip)
    buf = 0.35
    land_l = np.array([beyond + 0.42, 0.10, float(height_at(fld, [beyond + 0.42, 0.10]))])
    land_r = np.array([beyond + 0.58, -0.10, float(height_at(fld, [beyond + 0.58, -0.10]))])
    t0 = script.t
    script.foot_l.stances[-1].t1 = t0
    script.foot_r.stances[-1].t1 = t0
    script.flight_windows.append((t0, t0 + 0.70))
    script.reach_windows.append((t0 - 0.15, t0 + 0.85))
    script.move(0.22, x=face - 0.18, z=apex)            # rise before the face
    script.move(0.28, x=beyond + buf, z=apex)           # traverse level
    script.move(0.20, x=beyond + 0.62, z=CROUCH_HEIGHT + 0.10)  # descend past the buffer
    script.foot_l.add(script.t - 0.04, 1e9, land_l)
    script.foot_r.add(script.t, 1e9, land_r)
    script.hold(0.04)
    script.move(0.3, x=beyond + 0.70, z=STAND_HEIGHT)
    script.settle_feet()
    script.hold(0.25)
    return script


def _build_stairs(p: PrimitiveParams, fld, spec: TerrainSpec, rng) -> MotionScript:
    """Step-to stair gait: the leading foot moves to the next tread and the
    trailing foot joins it there; the root rides above the lowest nearby
    support. Step-over-step is out of reach for these leg proportions."""
    sh, sw, n = spec.height, spec.width, spec.steps
    x0 = spec.start_x
    up = spec.direction > 0
    z_gait = 0.52
    swing, ds = 0.28, 0.10

    start_z = (0.0 if up else n * sh) + STAND_HEIGHT
    script = MotionScript(fld, np.zeros(2), 0.0, start_z)
    script.hold(0.2)
    _walk_approach(script, x0 - 0.30, p.speed)
    pos, _ = script.state()
    script.move(0.25, z=float(height_at(fld, pos[:2])) + z_gait)
    t_gait0 = script.t

    centers = [x0 + (k - 0.5) * sw for k in range(1, n + 1)]
    centers.append(centers[-1] + 0.26)  # short exit step onto the plateau / ground
    lead_is_left = True
    for i, cx in enumerate(centers):
        zc = float(height_at(fld, [cx, 0.0]))
        lead, trail = (script.foot_l, script.foot_r) if lead_is_left else \
                      (script.foot_r, script.foot_l)
        lat_lead = 0.10 if lead_is_left else -0.10
        # ascending: the root waits for the trailing foot (rear reach);
        # descending / level exit: it leads the step down instead
        exit_step = i == len(centers) - 1
        adv_lead = 0.5 if exit_step else (0.0 if up else 0.90)
        x_start = script.state()[0][0]
        x_goal = cx - 0.06
        for foot, lat, stagger, frac in ((lead, lat_lead, 0.0, adv_lead),
                                         (trail, -lat_lead, -0.02, 1.0)):
            t0 = script.t
            foot.stances[-1].t1 = t0
            foot.add(t0 + swing, 1e9, np.array([cx + stagger, lat, zc]))
            script.move(swing + ds, x=x_start + frac * (x_goal - x_start), mode="linear")
        lead_is_left = not lead_is_left
    _retime_root_to_support(script, t_gait0 + 0.02, script.t + 0.1, z_gait)
    script.hold(0.1)
    script.settle_feet()
    pos, _ = script.state()
    script.move(0.25, z=float(height_at(fld, pos[:2])) + STAND_HEIGHT)
    script.hold(0.25)
    return script


def _retime_root_to_support(script: MotionScript, t0: float, t1: float,
                            z_gait: float) -> None:
    """Rewrite root z keys inside [t0, t1] to ride z_gait above the lowest
    stance foot within a +/-0.3 s window: rising only after the rear foot
    leaves a tread, and descending ahead of a foot stepping down."""

    def support(t: float) -> float:
        zs = []
        for foot in (script.foot_l, script.foot_r):
            for st in foot.stances:
                if st.t0 - 1e-9 <= t <= st.t1 + 1e-9:
                    zs.append(st.point[2])
                    break
        if not zs:  # brief full-flight gap: bridge with the recent past
            return support(t - 0.05)
        return min(zs)

    def support_max(t: float) -> float:
        zs = []
        for foot in (script.foot_l, script.foot_r):
            for st in foot.stances:
                if st.t0 - 1e-9 <= t <= st.t1 + 1e-9:
                    zs.append(st.point[2])
                    break
        return max(zs) if zs else support_max(t - 0.05)

    def windowed(t: float) -> float:
        taus = np.linspace(-0.30, 0.30, 13)
        low = min(support(float(np.clip(t + tau, 0.0, script.t))) for tau in taus)
        # never crouch the leg planted on the higher level past its knee room
        return max(low + z_gait, support_max(t) + 0.41)

    avg_taus = np.linspace(-0.12, 0.12, 7)
    new_keys = []
    for (t, pos, yaw, mode) in script.keys:
        if t0 <= t <= t1:
            z = float(np.mean([windowed(np.clip(t + tau, t0 - 0.2, t1 + 0.2))
                               for tau in avg_taus]))
            pos = pos.copy()
            pos[2] = z
        new_keys.append((t, pos, yaw, mode))
    script.keys = new_keys
