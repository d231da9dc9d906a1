"""Tracker training stages and the closed-loop episode runner.

Pre-training replays dataset clips as references with the tracking +
regularization return. Fine-tuning runs the frozen motion generator in
a receding-horizon loop on randomized terrains and heading commands,
adding the heading task term. The same machinery drives evaluation
episodes in tracker-only (fixed clip) and tracker+generator modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import quat
from ..dataset.build import LoadedDataset
from ..errors import ValidationError
from ..generator import Denoiser
from ..motion import MotionClip, encode_frame
from ..rewards import RewardConfig
from ..skeleton import Skeleton, default_humanoid
from ..terrain import BOUNDS, HeightField, TerrainSpec, generate, height_at
from .env import (GOAL, TIMEOUT, EnvConfig, InitRandomization, TrackerEnv, default_pose)
from .ppo import Adam, PolicyValue, PpoConfig, RolloutBuffer, ppo_update
from .refs import ClipRefProvider, GenRefProvider


@dataclass(frozen=True)
class StageConfig:
    num_envs: int = 32
    iterations: int = 220
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    init_rand: InitRandomization = field(default_factory=InitRandomization)
    # fine-tuning stage
    gen_steps: int = 2
    gen_sigma_scan: float = 0.05
    gen_sigma_state: float = 0.02
    obs_noise: float = 0.01
    yaw_range: float = 0.35
    goal_distance: tuple[float, float] = (3.2, 4.6)


@dataclass
class StageCurve:
    mean_reward: list[float]
    episode_return: list[float]
    success_rate: list[float]
    stats: list[dict]


def standing_pose(skel: Skeleton, fld: HeightField, xy, yaw: float) -> np.ndarray:
    """(7 + J,) spawn pose standing on the terrain at xy."""
    from ..dataset.gait import STAND_HEIGHT
    ground = float(height_at(fld, np.asarray(xy)))
    root = np.array([xy[0], xy[1], ground + STAND_HEIGHT])
    return np.concatenate([root, quat.from_yaw(yaw), default_pose(skel)])


def clip_start_pose(clip: MotionClip) -> np.ndarray:
    f = clip.frames[0]
    return np.concatenate([f.root_pos, f.root_quat, f.joint_pos])


def clip_goal(clip: MotionClip) -> np.ndarray:
    return clip.frames[-1].root_pos[:2].copy()


# ---- pre-training -------------------------------------------------------------------


def clip_pose_at(clip: MotionClip, k: int) -> np.ndarray:
    f = clip.frames[k]
    return np.concatenate([f.root_pos, f.root_quat, f.joint_pos])


def pretrain(dataset: LoadedDataset, cfg: StageConfig, rng: np.random.Generator,
             iterations: int | None = None) -> tuple[PolicyValue, StageCurve]:
    """Train the tracker on dataset clip references with the pre-training
    return; deterministic given the rng seed.

    Episodes use reference state initialization (spawn posed on a random
    reference frame) and terminate early on tracking loss, which keeps the
    exponential tracking rewards in their informative region."""
    if not dataset.clips:
        raise ValidationError("pre-training needs a non-empty dataset")
    skel = dataset.skel
    n = cfg.num_envs
    iterations = cfg.iterations if iterations is None else iterations
    clip_idx = np.asarray(rng.integers(0, len(dataset.clips), size=n))
    fields = [dataset.terrains[i] for i in clip_idx]
    goals = np.stack([clip_goal(dataset.clips[i]) for i in clip_idx])
    seeds = rng.integers(0, 2 ** 31 - 1, size=n)
    env_cfg = replace(cfg.env, track_err_limit=0.8, pos_err_limit=0.8)
    env = TrackerEnv(skel, fields, env_cfg, goals, seeds)
    provider = ClipRefProvider(dataset.clips, skel)
    offsets = np.zeros(n, dtype=np.int64)
    clip_len = np.array([len(dataset.clips[i]) for i in clip_idx])
    spawns = np.zeros((n, 7 + skel.joint_count))

    def sample_starts(ids: np.ndarray) -> None:
        for i in ids:
            clip = dataset.clips[clip_idx[i]]
            offsets[i] = rng.integers(0, max(len(clip) - 40, 1))
            spawns[i] = clip_pose_at(clip, int(offsets[i]))

    sample_starts(np.arange(n))
    provider.reset(clip_idx, offsets)
    env.reset(spawns, cfg.init_rand)

    pv = PolicyValue(env.obs_dim, skel.joint_count, cfg.ppo, rng)
    opt = Adam(pv.parameters(), lr=cfg.ppo.lr)
    curve = StageCurve([], [], [], [])
    ep_return = np.zeros(n)
    finished_returns: list[float] = []
    finished_goal: list[bool] = []

    def reset_done():
        ids = np.where(env.done)[0]
        if ids.size:
            finished_returns.extend(ep_return[ids].tolist())
            finished_goal.extend((env.term[ids] == GOAL).tolist())
            ep_return[ids] = 0.0
            sample_starts(ids)
            provider.reset(clip_idx, offsets)
            env.reset(spawns, cfg.init_rand, ids)

    for it in range(iterations):
        t_len = cfg.ppo.rollout_steps
        buf_obs = np.zeros((t_len, n, env.obs_dim))
        buf_act = np.zeros((t_len, n, skel.joint_count))
        buf_rew = np.zeros((t_len, n))
        buf_done = np.zeros((t_len, n), dtype=bool)
        buf_val = np.zeros((t_len, n))
        buf_logp = np.zeros((t_len, n))
        for t in range(t_len):
            ref = provider.frame(env.step_count, offset=1)
            obs = env.observe(ref)
            action, logp, val = pv.act(obs, rng)
            targets = env.default_pose + cfg.env.action_scale * action
            reward, done, info = env.step(targets, ref, stage="pre")
            over = env.step_count >= (clip_len - offsets) + 60
            if np.any(over & ~env.done):
                env.force_done(np.where(over & ~env.done)[0], TIMEOUT)
                done = env.done.copy()
            buf_obs[t] = obs
            buf_act[t] = action
            buf_rew[t] = reward
            buf_done[t] = done
            buf_val[t] = val
            buf_logp[t] = logp
            ep_return += reward
            reset_done()
        last_ref = provider.frame(env.step_count, offset=1)
        last_val = pv.value_np(env.observe_peek(last_ref))
        buf = RolloutBuffer(buf_obs, buf_act, buf_rew, buf_done, buf_val, buf_logp, last_val)
        stats = ppo_update(pv, buf, cfg.ppo, rng, opt)
        curve.mean_reward.append(float(buf_rew.mean()))
        curve.episode_return.append(float(np.mean(finished_returns[-50:]))
                                    if finished_returns else 0.0)
        curve.success_rate.append(float(np.mean(finished_goal[-50:]))
                                  if finished_goal else 0.0)
        curve.stats.append({k: (float(np.mean(v)) if isinstance(v, list) else v)
                            for k, v in stats.items()})
    return pv, curve


# ---- fine-tuning --------------------------------------------------------------------


def sample_finetune_spec(rng: np.random.Generator) -> TerrainSpec:
    """Randomized fine-tuning terrain: stairs, hurdles, boxes, pyramids."""
    kind = ("stairs", "hurdle", "box", "pyramid")[rng.integers(0, 4)]
    if kind == "stairs":
        return TerrainSpec(kind="stairs", height=float(rng.uniform(0.15, 0.25)),
                           width=0.30, steps=int(rng.integers(3, 6)),
                           direction=int(rng.choice([1, -1])), start_x=2.0)
    if kind == "hurdle":
        return TerrainSpec(kind="hurdle", height=float(rng.uniform(0.25, 0.55)),
                           width=0.2, yaw=float(rng.uniform(-0.5, 0.5)), start_x=2.0)
    if kind == "box":
        return TerrainSpec(kind="box", height=float(rng.uniform(0.30, 0.85)),
                           width=1.8, yaw=float(rng.uniform(-0.5, 0.5)),
                           pitch=float(rng.uniform(-0.15, 0.15)), start_x=2.0)
    return TerrainSpec(kind="pyramid", height=float(rng.uniform(0.30, 0.85)),
                       steps=int(rng.integers(2, 4)), start_x=2.0)


def finetune(pv: PolicyValue, den: Denoiser, cfg: StageConfig,
             rng: np.random.Generator, iterations: int | None = None,
             skel: Skeleton | None = None) -> tuple[PolicyValue, StageCurve, dict]:
    """Closed-loop fine-tuning against the frozen generator on randomized
    terrains and heading commands; adds the heading task reward."""
    skel = skel or default_humanoid()
    n = cfg.num_envs
    iterations = cfg.iterations if iterations is None else iterations
    gen_hash_before = den.param_hash()
    specs = [sample_finetune_spec(rng) for _ in range(n)]
    fields = [generate(s, np.random.default_rng(int(rng.integers(0, 2 ** 31)))) for s in specs]
    env_cfg = replace(cfg.env, obs_noise=cfg.obs_noise, timeout=12.0)
    seeds = rng.integers(0, 2 ** 31 - 1, size=n)
    goals = np.zeros((n, 2))
    env = TrackerEnv(skel, fields, env_cfg, goals, seeds)
    gen_rngs = [np.random.default_rng(int(s)) for s in rng.integers(0, 2 ** 31 - 1, size=n)]
    provider = GenRefProvider(den, skel, fields, goals, cfg.gen_steps, gen_rngs,
                              sigma_scan=cfg.gen_sigma_scan,
                              sigma_state=cfg.gen_sigma_state, dt=env_cfg.dt)
    heading_log: list[float] = []

    def new_episode(ids: np.ndarray):
        spawns = np.zeros((n, 7 + skel.joint_count))
        for i in ids:
            theta = float(rng.uniform(-cfg.yaw_range, cfg.yaw_range))
            dist = float(rng.uniform(*cfg.goal_distance))
            spawns[i] = standing_pose(skel, fields[i], np.array([0.0, rng.uniform(-0.4, 0.4)]),
                                      theta * 0.3)
            goals[i] = spawns[i][:2] + dist * np.array([np.cos(theta), np.sin(theta)])
            heading_log.append(theta)
        env.goals[ids] = goals[ids]
        provider.goals[ids] = goals[ids]
        env.reset(spawns, cfg.init_rand, ids)
        provider.next_replan[ids] = 0.0

    new_episode(np.arange(n))
    opt = Adam(pv.parameters(), lr=cfg.ppo.lr)
    curve = StageCurve([], [], [], [])
    ep_return = np.zeros(n)
    finished_returns: list[float] = []
    finished_goal: list[bool] = []

    for it in range(iterations):
        t_len = cfg.ppo.rollout_steps
        buf_obs = np.zeros((t_len, n, env.obs_dim))
        buf_act = np.zeros((t_len, n, skel.joint_count))
        buf_rew = np.zeros((t_len, n))
        buf_done = np.zeros((t_len, n), dtype=bool)
        buf_val = np.zeros((t_len, n))
        buf_logp = np.zeros((t_len, n))
        for t in range(t_len):
            due = np.where(provider.replan_due(env.time) & ~env.done)[0]
            provider.replan(due, env.past_feats[due][:, ::-1], env.time)
            ref = provider.frame(env.step_count)
            obs = env.observe(ref)
            action, logp, val = pv.act(obs, rng)
            targets = env.default_pose + env_cfg.action_scale * action
            reward, done, info = env.step(targets, ref, stage="post")
            provider.advance(~env.done)
            buf_obs[t] = obs
            buf_act[t] = action
            buf_rew[t] = reward
            buf_done[t] = done
            buf_val[t] = val
            buf_logp[t] = logp
            ep_return += reward
            ids = np.where(env.done)[0]
            if ids.size:
                finished_returns.extend(ep_return[ids].tolist())
                finished_goal.extend((env.term[ids] == GOAL).tolist())
                ep_return[ids] = 0.0
                new_episode(ids)
        due = np.where(provider.replan_due(env.time) & ~env.done)[0]
        provider.replan(due, env.past_feats[due][:, ::-1], env.time)
        last_val = pv.value_np(env.observe_peek(provider.frame(env.step_count)))
        buf = RolloutBuffer(buf_obs, buf_act, buf_rew, buf_done, buf_val, buf_logp, last_val)
        stats = ppo_update(pv, buf, cfg.ppo, rng, opt)
        curve.mean_reward.append(float(buf_rew.mean()))
        curve.episode_return.append(float(np.mean(finished_returns[-50:]))
                                    if finished_returns else 0.0)
        curve.success_rate.append(float(np.mean(finished_goal[-50:]))
                                  if finished_goal else 0.0)
        curve.stats.append({k: (float(np.mean(v)) if isinstance(v, list) else v)
                            for k, v in stats.items()})
    if den.param_hash() != gen_hash_before:
        raise ValidationError("frozen generator was mutated during fine-tuning")
    diag = {"generator_hash": gen_hash_before, "headings": heading_log}
    return pv, curve, diag


# ---- closed-loop evaluation ----------------------------------------------------------


@dataclass
class EpisodeOutcome:
    success: bool
    time: float
    term: int
    trace: dict | None = None


def run_episodes(pv: PolicyValue, mode: str, fields: list[HeightField],
                 goals: np.ndarray, spawns: np.ndarray, seeds: np.ndarray,
                 skel: Skeleton, env_cfg: EnvConfig,
                 clip: MotionClip | None = None, den: Denoiser | None = None,
                 gen_steps: int = 2, record_trace: bool = False,
                 init_rand: InitRandomization = InitRandomization()) -> list[EpisodeOutcome]:
    """Batched closed-loop episodes in lockstep; actions are the policy mean
    (deterministic given seeds)."""
    if mode not in ("tracker_only", "tracker_plus_gen"):
        raise ValidationError(f"unknown mode {mode!r}")
    n = len(fields)
    env = TrackerEnv(skel, fields, env_cfg, goals, seeds)
    if mode == "tracker_only":
        if clip is None:
            raise ValidationError("tracker_only mode needs a reference clip")
        provider = ClipRefProvider([clip], skel)
        provider.reset(np.zeros(n, dtype=np.int64))
    else:
        if den is None:
            raise ValidationError("tracker_plus_gen mode needs a denoiser")
        gen_rngs = [np.random.default_rng(int(s) ^ 0x5EED) for s in seeds]
        provider = GenRefProvider(den, skel, fields, goals, gen_steps, gen_rngs,
                                  dt=env_cfg.dt)
    env.reset(spawns, init_rand)
    trace: dict[str, list] | None = None
    if record_trace:
        trace = {"t": [], "root": [], "yaw": [], "joints": [], "ref_root": [],
                 "reward": [], "term": []}
    max_steps = int(env_cfg.timeout / env_cfg.dt) + 2
    for _ in range(max_steps):
        if np.all(env.done):
            break
        if mode == "tracker_plus_gen":
            due = np.where(provider.replan_due(env.time) & ~env.done)[0]
            provider.replan(due, env.past_feats[due][:, ::-1], env.time)
            ref = provider.frame(env.step_count)
        else:
            ref = provider.frame(env.step_count, offset=1)
        obs = env.observe(ref)
        targets = env.default_pose + env_cfg.action_scale * pv.mean_action(obs)
        reward, done, info = env.step(targets, ref, stage="post")
        if mode == "tracker_plus_gen":
            provider.advance(~env.done)
        if trace is not None:
            trace["t"].append(env.time.copy())
            trace["root"].append(env.root.copy())
            trace["yaw"].append(env.yaw.copy())
            trace["joints"].append(env.q.copy())
            trace["ref_root"].append(np.asarray(ref.base_pos).reshape(n, 3).copy())
            trace["reward"].append(reward.copy())
            trace["term"].append(env.term.copy())
    outcomes = []
    for i in range(n):
        tr = None
        if trace is not None:
            tr = {k: np.stack([row[i] for row in v]) for k, v in trace.items()}
        outcomes.append(EpisodeOutcome(success=bool(env.term[i] == GOAL),
                                       time=float(env.time[i]),
                                       term=int(env.term[i]), trace=tr))
    return outcomes


def closed_loop_episode(pv: PolicyValue, fld: HeightField, goal: np.ndarray,
                        mode: str, seed: int, skel: Skeleton, env_cfg: EnvConfig,
                        clip: MotionClip | None = None, den: Denoiser | None = None,
                        spawn: np.ndarray | None = None,
                        record_trace: bool = True) -> EpisodeOutcome:
    """Single-episode convenience wrapper around run_episodes."""
    if spawn is None:
        if clip is not None:
            spawn = clip_start_pose(clip)
        else:
            spawn = standing_pose(skel, fld, np.zeros(2), 0.0)
    out = run_episodes(pv, mode, [fld], np.asarray(goal, dtype=np.float64)[None],
                       spawn[None], np.array([seed]), skel, env_cfg,
                       clip=clip, den=den, record_trace=record_trace)
    return out[0]


def save_trace(path, trace: dict) -> None:
    """Columnar text trace: one row per control step."""
    joints = trace["joints"]
    cols = ["t", "x", "y", "z", "yaw"] + [f"q{i}" for i in range(joints.shape[1])] \
        + ["ref_x", "ref_y", "ref_z", "reward", "term"]
    with open(path, "w") as fh:
        fh.write("# " + " ".join(cols) + "\n")
        for k in range(len(trace["t"])):
            row = [trace["t"][k], *trace["root"][k], trace["yaw"][k], *joints[k],
                   *trace["ref_root"][k], trace["reward"][k], trace["term"][k]]
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
