"""Command-line entry point.

Every subcommand takes --seed, --config, and --out; artifacts land under
--out together with a run manifest (version, seed, config hash, emitted
files). Wall-clock numbers go to a separate timings.json so re-runs with
the same seed/config produce bit-identical artifacts.

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import Config, config_hash, load_config
from .dataset import (AugmentConfig, PrimitiveParams, augment, build_dataset,
                      default_primitives, load_dataset)
from .errors import NumericFailure, ValidationError
from .generator import (Condition, GeneratorConfig, extract_windows, load_model,
                        save_model, train)
from .harness import (EvalArtifacts, EvalGrid, bench_latency, compare_policies,
                      eval_grid, recompute_mean_sd, reference_clip_for_task,
                      write_grid_result)
from .motion import load_clip, save_clip
from .rewards import (ActionHistory, Command, Limits, ReferenceFrame, RobotState,
                      default_limits, r_mimic, r_reg, r_task, reward_post, reward_pre,
                      reward_rows)
from .skeleton import default_humanoid, fk, load_skeleton
from .terrain import TerrainSpec, generate, load_heightfield, save_heightfield
from .tracker import (EnvConfig, PolicyValue, closed_loop_episode, finetune,
                      load_policy, pretrain, save_policy, save_trace)
from .harness.evalgrid import TASK_SKILL, cell_terrain
from .tracker.stages import clip_goal, clip_start_pose


class RunContext:
    def __init__(self, args):
        self.args = args
        self.seed = args.seed
        self.cfg, self.cfg_hash = load_config(args.config)
        self.out = Path(args.out) if getattr(args, "out", None) else None
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[str] = []
        self.t0 = time.time()

    def path(self, name: str) -> Path:
        if self.out is None:
            raise ValidationError("this subcommand needs --out")
        self.artifacts.append(name)
        return self.out / name

    def meta(self) -> dict:
        return {"version": f"locostack-{__version__}", "seed": self.seed,
                "config_hash": self.cfg_hash}

    def finish(self, extra: dict | None = None) -> None:
        if self.out is None:
            return
        manifest = self.meta()
        manifest["command"] = self.args.command
        manifest["artifacts"] = sorted(self.artifacts)
        if extra:
            manifest.update(extra)
        (self.out / "run_manifest.json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True))
        (self.out / "timings.json").write_text(
            json.dumps({"wall_seconds": time.time() - self.t0}))


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


# ---- subcommand implementations ------------------------------------------------------


def cmd_terrain_gen(ctx: RunContext) -> None:
    spec_doc = yaml.safe_load(Path(ctx.args.spec).read_text())
    spec = TerrainSpec.from_dict(spec_doc)
    fld = generate(spec, _rng(ctx.seed))
    save_heightfield(ctx.path("terrain.hf"), fld, text=ctx.args.text)
    ctx.finish({"kind": spec.kind})


def cmd_dataset_build(ctx: RunContext) -> None:
    cfg = ctx.cfg
    prims = default_primitives(cfg.dataset_walks)
    manifest = build_dataset(prims, _rng(ctx.seed), ctx.out, cfg.dataset)
    ctx.artifacts.append("manifest.json")
    ctx.finish({"clips": manifest["counts"]["total"]})


def cmd_dataset_augment(ctx: RunContext) -> None:
    skel = default_humanoid()
    clip = load_clip(ctx.args.clip, expect_skeleton=skel)
    fld = load_heightfield(ctx.args.terrain)
    out = augment(clip, fld, ctx.cfg.dataset.augment, skel)
    save_clip(ctx.path("augmented.mclip"), out, skel)
    ctx.finish()


def cmd_gen_train(ctx: RunContext) -> None:
    cfg = ctx.cfg.generator
    skel = default_humanoid()
    ds = load_dataset(ctx.args.data, skel)
    rng = _rng(ctx.seed)
    samples = []
    for clip, fld in zip(ds.clips, ds.terrains):
        samples += extract_windows(clip, fld, skel, cfg.scan, cfg.horizon,
                                   cfg.window_stride)
    den, curve = train(samples, cfg, rng, skel)
    save_model(ctx.path("model.bin"), den)
    curve_doc = {"steps": curve.steps, "loss": curve.loss,
                 "holdout_steps": curve.holdout_steps, "holdout_rec": curve.holdout_rec}
    ctx.path("train_curve.json").write_text(json.dumps(curve_doc))
    ctx.finish({"windows": len(samples), "final_loss": curve.loss[-1] if curve.loss else None})


def cmd_gen_sample(ctx: RunContext) -> None:
    den = load_model(ctx.args.model)
    cond_doc = json.loads(Path(ctx.args.cond).read_text())
    cond = Condition(heading=np.asarray(cond_doc["heading"], dtype=np.float64),
                     scan=np.asarray(cond_doc["scan"], dtype=np.float64),
                     past=np.asarray(cond_doc["past"], dtype=np.float64))
    window = den.sample(cond, ctx.args.steps, _rng(ctx.seed))
    path = ctx.path("window.txt")
    with open(path, "w") as fh:
        for row in window:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    ctx.finish({"steps": ctx.args.steps})


def cmd_pretrain(ctx: RunContext) -> None:
    skel = default_humanoid()
    ds = load_dataset(ctx.args.data, skel)
    pv, curve = pretrain(ds, ctx.cfg.stage, _rng(ctx.seed),
                         iterations=ctx.cfg.pretrain_iterations)
    save_policy(ctx.path("policy.bin"), pv)
    ctx.path("pretrain_curve.json").write_text(json.dumps(
        {"mean_reward": curve.mean_reward, "success_rate": curve.success_rate}))
    ctx.finish()


def cmd_finetune(ctx: RunContext) -> None:
    skel = default_humanoid()
    pv = load_policy(ctx.args.policy, ctx.cfg.stage.ppo)
    den = load_model(ctx.args.model, skel)
    pv, curve, diag = finetune(pv, den, ctx.cfg.stage, _rng(ctx.seed),
                               iterations=ctx.cfg.finetune_iterations, skel=skel)
    save_policy(ctx.path("policy.bin"), pv)
    ctx.path("finetune_curve.json").write_text(json.dumps(
        {"mean_reward": curve.mean_reward, "success_rate": curve.success_rate,
         "generator_hash": diag["generator_hash"]}))
    ctx.finish({"generator_hash": diag["generator_hash"]})


def cmd_eval_grid(ctx: RunContext) -> None:
    skel = default_humanoid()
    pv = load_policy(ctx.args.policy)
    den = load_model(ctx.args.model, skel) if ctx.args.model else None
    modes = tuple(ctx.args.modes.split(","))
    grid = EvalGrid.default(ctx.args.task, episodes=ctx.cfg.eval.episodes)
    grid = EvalGrid(task=grid.task, heights=grid.heights, yaws_deg=grid.yaws_deg,
                    episodes=grid.episodes, modes=modes,
                    height_scale=ctx.cfg.eval.height_scale)
    art = EvalArtifacts(skel=skel, policy=pv, denoiser=den,
                        gen_steps=ctx.cfg.eval.gen_steps)
    result = eval_grid(grid, art, ctx.seed)
    write_grid_result(ctx.out, result, ctx.meta())
    ctx.artifacts += [f"grid_{result.task}.csv", f"grid_{result.task}.json"]
    ctx.finish({"mean_sd": {k: list(v) for k, v in result.mean_sd.items()}})


def cmd_eval_compare(ctx: RunContext) -> None:
    skel = default_humanoid()
    pre = load_policy(ctx.args.pre)
    fine = load_policy(ctx.args.fine)
    den = load_model(ctx.args.model, skel)
    tasks = ctx.args.tasks.split(",") if ctx.args.tasks else list(ctx.cfg.eval.tasks)
    result = compare_policies(tasks, pre, fine, den, skel, ctx.seed,
                              episodes=ctx.cfg.eval.episodes)
    with open(ctx.path("compare.csv"), "w") as fh:
        fh.write("task,height,pretrained,finetuned\n")
        for r in result["rows"]:
            fh.write(f"{r['task']},{r['height']!r},{r['pretrained']!r},{r['finetuned']!r}\n")
    doc = dict(ctx.meta())
    doc["result"] = result
    ctx.path("compare.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    ctx.finish()


def cmd_bench(ctx: RunContext) -> None:
    den = load_model(ctx.args.model)
    stats = bench_latency(den, ctx.args.calls, ctx.args.steps, seed=ctx.seed)
    print(f"sample() K={stats.steps}: p50 {stats.p50_ms:.2f} ms, "
          f"p95 {stats.p95_ms:.2f} ms, max {stats.max_ms:.2f} ms over {stats.calls} calls")
    if ctx.out is not None:
        doc = dict(ctx.meta())
        doc["latency"] = stats.to_dict()
        ctx.path("bench.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
        ctx.finish()


def _load_state_doc(path) -> dict:
    return json.loads(Path(path).read_text())


def cmd_rewards_eval(ctx: RunContext) -> None:
    s = _load_state_doc(ctx.args.state)
    r = _load_state_doc(ctx.args.ref)
    l = _load_state_doc(ctx.args.limits)
    h = _load_state_doc(ctx.args.history)
    state = RobotState(**{k: np.asarray(v, dtype=np.float64) for k, v in s.items()})
    ref = ReferenceFrame(**{k: np.asarray(v, dtype=np.float64) for k, v in r.items()})
    limits = Limits(**{k: np.asarray(v, dtype=np.float64) for k, v in l.items()})
    history = ActionHistory(**{k: np.asarray(v, dtype=np.float64) for k, v in h.items()})
    rows = reward_rows(state, ref, limits, history)
    lines = []
    for name, val in rows.items():
        lines.append(f"{name} {float(val)!r}")
    lines.append(f"r_mimic {float(r_mimic(state, ref))!r}")
    lines.append(f"r_reg {float(r_reg(state, limits, history))!r}")
    lines.append(f"reward_pre {float(reward_pre(state, ref, limits, history))!r}")
    if ctx.args.heading:
        cmd = Command(heading=np.asarray(json.loads(ctx.args.heading), dtype=np.float64))
        lines.append(f"r_task {float(r_task(state, cmd))!r}")
        lines.append(f"reward_post {float(reward_post(state, ref, limits, history, cmd))!r}")
    text = "\n".join(lines)
    print(text)
    if ctx.out is not None:
        ctx.path("rewards.txt").write_text(text + "\n")
        ctx.finish()


def cmd_replay(ctx: RunContext) -> None:
    skel = default_humanoid()
    pv = load_policy(ctx.args.policy)
    den = load_model(ctx.args.model, skel) if ctx.args.model else None
    task = ctx.args.task
    clip, spec = reference_clip_for_task(task, skel)
    height = ctx.args.height if ctx.args.height is not None else TASK_SKILL[task][1]
    fld = cell_terrain(spec, height, ctx.args.yaw_deg)
    outcome = closed_loop_episode(pv, fld, clip_goal(clip), ctx.args.mode, ctx.seed,
                                  skel, EnvConfig(), clip=clip, den=den)
    save_trace(ctx.path("trace.txt"), outcome.trace)
    if ctx.args.obj:
        _export_obj_frames(ctx, outcome.trace, skel)
    ctx.finish({"success": outcome.success, "time": outcome.time, "term": outcome.term})


def _export_obj_frames(ctx: RunContext, trace: dict, skel) -> None:
    from . import quat as quat_mod
    n = len(trace["t"])
    stride = max(n // 200, 1)
    for k in range(0, n, stride):
        body = fk(skel, trace["root"][k], quat_mod.from_yaw(trace["yaw"][k]),
                  trace["joints"][k])
        with open(ctx.path(f"frame_{k:05d}.obj"), "w") as fh:
            for p in body:
                fh.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")


# ---- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locostack",
        description="Terrain-aware locomotion stack: data synthesis, diffusion "
                    "motion generation, tracker training, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="YAML config overriding defaults")
        p.add_argument("--out", required=needs_out, help="output directory")

    p = sub.add_parser("terrain", help="terrain tools")
    tsub = p.add_subparsers(dest="sub", required=True)
    tg = tsub.add_parser("gen", help="rasterize a terrain spec")
    tg.add_argument("--spec", required=True)
    tg.add_argument("--text", action="store_true")
    common(tg)

    p = sub.add_parser("dataset", help="dataset tools")
    dsub = p.add_subparsers(dest="sub", required=True)
    db = dsub.add_parser("build", help="synthesize + augment the primitive library")
    common(db)
    da = dsub.add_parser("augment", help="re-optimize one clip against new terrain")
    da.add_argument("--clip", required=True)
    da.add_argument("--terrain", required=True)
    common(da)

    p = sub.add_parser("gen", help="motion generator")
    gsub = p.add_subparsers(dest="sub", required=True)
    gt = gsub.add_parser("train")
    gt.add_argument("--data", required=True)
    common(gt)
    gs = gsub.add_parser("sample")
    gs.add_argument("--model", required=True)
    gs.add_argument("--cond", required=True)
    gs.add_argument("--steps", type=int, default=2)
    common(gs)

    pt = sub.add_parser("pretrain", help="train the tracker on dataset references")
    pt.add_argument("--data", required=True)
    common(pt)

    ft = sub.add_parser("finetune", help="closed-loop fine-tuning with frozen generator")
    ft.add_argument("--policy", required=True)
    ft.add_argument("--model", required=True)
    common(ft)

    p = sub.add_parser("eval", help="evaluation grids")
    esub = p.add_subparsers(dest="sub", required=True)
    eg = esub.add_parser("grid")
    eg.add_argument("--policy", required=True)
    eg.add_argument("--model", default=None)
    eg.add_argument("--task", required=True)
    eg.add_argument("--modes", default="tracker_only,tracker_plus_gen")
    common(eg)
    ec = esub.add_parser("compare")
    ec.add_argument("--pre", required=True)
    ec.add_argument("--fine", required=True)
    ec.add_argument("--model", required=True)
    ec.add_argument("--tasks", default=None)
    common(ec)

    b = sub.add_parser("bench", help="generator sampling latency")
    b.add_argument("--model", required=True)
    b.add_argument("--calls", type=int, default=50)
    b.add_argument("--steps", type=int, default=2)
    common(b, needs_out=False)

    rw = sub.add_parser("rewards", help="reward suite")
    rsub = rw.add_subparsers(dest="sub", required=True)
    re_ = rsub.add_parser("eval", help="print every reward row for given state files")
    re_.add_argument("--state", required=True)
    re_.add_argument("--ref", required=True)
    re_.add_argument("--limits", required=True)
    re_.add_argument("--history", required=True)
    re_.add_argument("--heading", default=None, help="JSON [dx, dy] to add the task term")
    common(re_, needs_out=False)

    rp = sub.add_parser("replay", help="run one episode and export its trace")
    rp.add_argument("--policy", required=True)
    rp.add_argument("--model", default=None)
    rp.add_argument("--task", required=True)
    rp.add_argument("--mode", default="tracker_plus_gen")
    rp.add_argument("--height", type=float, default=None)
    rp.add_argument("--yaw-deg", type=float, default=0.0)
    rp.add_argument("--obj", action="store_true", help="emit per-frame point clouds")
    common(rp)
    return parser


_DISPATCH = {
    ("terrain", "gen"): cmd_terrain_gen,
    ("dataset", "build"): cmd_dataset_build,
    ("dataset", "augment"): cmd_dataset_augment,
    ("gen", "train"): cmd_gen_train,
    ("gen", "sample"): cmd_gen_sample,
    ("pretrain", None): cmd_pretrain,
    ("finetune", None): cmd_finetune,
    ("eval", "grid"): cmd_eval_grid,
    ("eval", "compare"): cmd_eval_compare,
    ("bench", None): cmd_bench,
    ("rewards", "eval"): cmd_rewards_eval,
    ("replay", None): cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        ctx = RunContext(args)
        _DISPATCH[(args.command, getattr(args, "sub", None))](ctx)
        return 0
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    except (ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
