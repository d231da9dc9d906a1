"""Evaluation grids: success rates of tracker-only vs tracker+generator
across obstacle-height and yaw sweeps, with paired episode seeds, and
the pretrained-vs-fine-tuned comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import PrimitiveParams, nominal_terrain, synth_with_terrain
from ..errors import ValidationError
from ..generator import Denoiser
from ..motion import MotionClip
from ..skeleton import Skeleton
from ..terrain import HeightField, TerrainSpec, generate, scale_obstacle
from ..tracker import (EnvConfig, InitRandomization, PolicyValue, clip_goal,
                       clip_start_pose, run_episodes)

TASKS = ("box_climb", "vault", "stairs_up", "stairs_down", "jump_down")

# nominal reference skill per task and the default evaluation axes
TASK_SKILL = {
    "box_climb": ("climb_up", 0.5),
    "vault": ("vault", 0.35),
    "stairs_up": ("stairs_up", 0.20),
    "stairs_down": ("stairs_down", 0.18),
    "jump_down": ("jump_down", 0.5),
}
TASK_HEIGHTS = {
    "box_climb": (0.4, 0.5, 0.6, 0.7, 0.8),
    "vault": (0.25, 0.35, 0.45, 0.55),
    "stairs_up": (0.15, 0.20, 0.25),
    "stairs_down": (0.15, 0.18, 0.22),
    "jump_down": (0.4, 0.5, 0.6, 0.7),
}
TASK_YAWS_DEG = {
    "box_climb": (-30.0, -15.0, 15.0, 30.0),
    "vault": (-40.0, -20.0, 20.0, 40.0),
    "stairs_up": (-30.0, -15.0, 15.0, 30.0),
    "stairs_down": (-30.0, -15.0, 15.0, 30.0),
    "jump_down": (-30.0, -15.0, 15.0, 30.0),
}
# stairs cannot rasterize a yaw in this generator; their yaw axis is skipped
YAWABLE = {"box_climb", "vault", "jump_down"}


@dataclass(frozen=True)
class EvalGrid:
    task: str
    heights: tuple[float, ...] = ()
    yaws_deg: tuple[float, ...] = ()
    episodes: int = 500
    modes: tuple[str, ...] = ("tracker_only", "tracker_plus_gen")
    height_scale: float = 1.0  # reduced-model difficulty scale on the height axis

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        if self.episodes < 1:
            raise ValidationError("episodes must be >= 1")
        if not (self.heights or self.yaws_deg):
            raise ValidationError("a grid needs at least one axis value")

    @staticmethod
    def default(task: str, episodes: int = 500) -> "EvalGrid":
        return EvalGrid(task=task, heights=TASK_HEIGHTS[task],
                        yaws_deg=TASK_YAWS_DEG[task] if task in YAWABLE else (),
                        episodes=episodes)

    def cells(self) -> list[dict]:
        """Paper-style axes: height sweep at yaw 0 plus yaw sweep at nominal."""
        nominal = TASK_SKILL[self.task][1]
        out = [{"height": h * self.height_scale, "yaw_deg": 0.0} for h in self.heights]
        for y in self.yaws_deg:
            out.append({"height": nominal * self.height_scale, "yaw_deg": y})
        return out


@dataclass
class GridResult:
    task: str
    cells: list[dict]                  # cell params + per-mode rates
    modes: tuple[str, ...]
    mean_sd: dict[str, tuple[float, float]]
    episodes_per_cell: int
    seed: int

    def to_dict(self) -> dict:
        return {"task": self.task, "cells": self.cells, "modes": list(self.modes),
                "mean_sd": {k: list(v) for k, v in self.mean_sd.items()},
                "episodes_per_cell": self.episodes_per_cell, "seed": self.seed}


@dataclass
class EvalArtifacts:
    """Everything a grid evaluation needs loaded in memory."""
    skel: Skeleton
    policy: PolicyValue
    denoiser: Denoiser | None
    env_cfg: EnvConfig = field(default_factory=EnvConfig)
    gen_steps: int = 2
    init_rand: InitRandomization = field(default_factory=InitRandomization)


def reference_clip_for_task(task: str, skel: Skeleton) -> tuple[MotionClip, TerrainSpec]:
    """The fixed nominal reference used by tracker-only mode (and for spawn
    poses and goals in both modes)."""
    skill, h = TASK_SKILL[task]
    params = PrimitiveParams(skill=skill, obstacle_height=h,
                             duration=3.4 if skill.startswith("stairs") else 3.6)
    clip, spec, _ = synth_with_terrain(params, np.random.default_rng(7), skel)
    return clip, spec


def cell_terrain(spec: TerrainSpec, height: float, yaw_deg: float) -> HeightField:
    mod = scale_obstacle(spec, height)
    if abs(yaw_deg) > 1e-9:
        from dataclasses import replace
        mod = replace(mod, yaw=np.deg2rad(yaw_deg))
    return generate(mod, np.random.default_rng(0))


def episode_seeds(master_seed: int, task: str, cell: dict, count: int) -> np.ndarray:
    """Per-episode seeds, identical across modes (paired comparison)."""
    import zlib
    ss = np.random.SeedSequence([master_seed, zlib.crc32(task.encode()),
                                 int(cell["height"] * 1000),
                                 int(cell["yaw_deg"] * 10) & 0x7FFFFFFF])
    return ss.generate_state(count)


def eval_grid(grid: EvalGrid, art: EvalArtifacts, seed: int,
              progress=None) -> GridResult:
    """Run every cell x mode x episode with split, paired seeds."""
    clip, spec = reference_clip_for_task(grid.task, art.skel)
    goal = clip_goal(clip)
    spawn = clip_start_pose(clip)
    cells_out = []
    for cell in grid.cells():
        fld = cell_terrain(spec, cell["height"], cell["yaw_deg"])
        seeds = episode_seeds(seed, grid.task, cell, grid.episodes)
        rates = {}
        for mode in grid.modes:
            if mode == "tracker_plus_gen" and art.denoiser is None:
                raise ValidationError("grid includes tracker_plus_gen but no generator loaded")
            outs = run_episodes(
                art.policy, mode, [fld] * grid.episodes,
                np.tile(goal, (grid.episodes, 1)), np.tile(spawn, (grid.episodes, 1)),
                seeds, art.skel, art.env_cfg, clip=clip, den=art.denoiser,
                gen_steps=art.gen_steps, init_rand=art.init_rand)
            rates[mode] = float(np.mean([o.success for o in outs]))
        entry = dict(cell)
        entry.update({f"rate_{m}": rates[m] for m in grid.modes})
        cells_out.append(entry)
        if progress:
            progress(entry)
    mean_sd = {}
    for m in grid.modes:
        vals = np.array([c[f"rate_{m}"] for c in cells_out])
        mean_sd[m] = (float(vals.mean()), float(vals.std()))
    return GridResult(task=grid.task, cells=cells_out, modes=grid.modes,
                      mean_sd=mean_sd, episodes_per_cell=grid.episodes, seed=seed)


def compare_policies(tasks: list[str], pre: PolicyValue, fine: PolicyValue,
                     den: Denoiser, skel: Skeleton, seed: int, episodes: int = 500,
                     env_cfg: EnvConfig | None = None,
                     heights: dict[str, tuple[float, ...]] | None = None,
                     progress=None) -> dict:
    """Paired pretrained-vs-fine-tuned comparison with the same generator;
    identical episode seeds for both policies per cell."""
    env_cfg = env_cfg or EnvConfig()
    rows = []
    for task in tasks:
        clip, spec = reference_clip_for_task(task, skel)
        goal = clip_goal(clip)
        spawn = clip_start_pose(clip)
        hs = (heights or TASK_HEIGHTS)[task]
        for h in hs:
            fld = cell_terrain(spec, h, 0.0)
            seeds = episode_seeds(seed, task, {"height": h, "yaw_deg": 0.0}, episodes)
            rates = {}
            for name, pv in (("pretrained", pre), ("finetuned", fine)):
                outs = run_episodes(pv, "tracker_plus_gen", [fld] * episodes,
                                    np.tile(goal, (episodes, 1)),
                                    np.tile(spawn, (episodes, 1)), seeds, skel, env_cfg,
                                    clip=clip, den=den)
                rates[name] = float(np.mean([o.success for o in outs]))
            row = {"task": task, "height": h, **rates}
            rows.append(row)
            if progress:
                progress(row)
    per_task = {}
    for task in tasks:
        sub = [r for r in rows if r["task"] == task]
        per_task[task] = {
            "pretrained": float(np.mean([r["pretrained"] for r in sub])),
            "finetuned": float(np.mean([r["finetuned"] for r in sub])),
        }
    return {"rows": rows, "per_task": per_task, "seed": seed,
            "episodes_per_cell": episodes}


# ---- result files ------------------------------------------------------------------


def write_grid_result(out_dir, result: GridResult, meta: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv = out / f"grid_{result.task}.csv"
    with open(csv, "w") as fh:
        cols = ["height", "yaw_deg"] + [f"rate_{m}" for m in result.modes]
        fh.write(",".join(cols) + "\n")
        for c in result.cells:
            fh.write(",".join(repr(float(c[k])) for k in cols) + "\n")
    summary = dict(meta)
    summary["result"] = result.to_dict()
    (out / f"grid_{result.task}.json").write_text(json.dumps(summary, indent=1, sort_keys=True))


def recompute_mean_sd(csv_path, mode: str) -> tuple[float, float]:
    """Independent second pass over the emitted per-cell file."""
    rows = Path(csv_path).read_text().strip().splitlines()
    cols = rows[0].split(",")
    idx = cols.index(f"rate_{mode}")
    vals = np.array([float(r.split(",")[idx]) for r in rows[1:]])
    return float(vals.mean()), float(vals.std())
