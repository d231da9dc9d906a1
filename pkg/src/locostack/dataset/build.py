"""Dataset packing: synthesize primitives, derive augmented variants on
modified terrain, and write clips + per-clip terrain + a manifest.

Everything is deterministic given the master seed; per-clip seeds are
spawned from it and recorded in the manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..motion import MotionClip, load_clip, save_clip
from ..skeleton import Skeleton, default_humanoid
from ..terrain import (HeightField, TerrainSpec, generate, load_heightfield, penetration,
                       save_heightfield, scale_obstacle, scatter_boxes, with_small_boxes)
from .augment import AugmentConfig, augment
from .synth import COVERAGE, PrimitiveParams, synth_with_terrain

MANIFEST_NAME = "manifest.json"
PENETRATION_GATE = 1e-2  # m, dataset-wide quality bar for packed clips


@dataclass(frozen=True)
class BuildConfig:
    augments_per_clip: int = 1
    scatter_density: float = 0.25   # small boxes per m^2 for walk/turn variants
    augment: AugmentConfig = AugmentConfig(max_iters=150)
    strict_penetration: bool = True


def _entry(clip_rel: str, terrain_rel: str, skill: str, seed: int, provenance: str,
           parent: str | None) -> dict:
    return {"clip": clip_rel, "terrain": terrain_rel, "skill": skill, "seed": seed,
            "provenance": provenance, "parent": parent}


def max_clip_penetration(clip: MotionClip, fld: HeightField,
                         skel: Skeleton) -> float:
    pts = np.stack([f.body_pos for f in clip.frames]).reshape(-1, 3)
    return float(penetration(fld, pts).max())


def _scaled_variant_spec(skill: str, spec: TerrainSpec, rng: np.random.Generator) -> TerrainSpec:
    lo, hi = COVERAGE[skill]
    return scale_obstacle(spec, float(rng.uniform(lo, hi)))


def build_dataset(specs: list[PrimitiveParams], rng: np.random.Generator, out_path,
                  cfg: BuildConfig | None = None, skel: Skeleton | None = None) -> dict:
    """Synthesize + augment every primitive; returns the manifest dict."""
    cfg = cfg or BuildConfig()
    skel = skel or default_humanoid()
    out = Path(out_path)
    try:
        (out / "clips").mkdir(parents=True, exist_ok=True)
        (out / "terrain").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"cannot create dataset directory {out}: {e}") from e

    entries: list[dict] = []
    idx = 0

    def pack(clip: MotionClip, fld: HeightField, skill: str, seed: int,
             provenance: str, parent: str | None) -> str:
        nonlocal idx
        pen = max_clip_penetration(clip, fld, skel)
        if pen > PENETRATION_GATE and cfg.strict_penetration:
            raise ValidationError(
                f"{skill} clip ({provenance}) penetrates terrain by {pen:.3f} m")
        clip_rel = f"clips/{idx:04d}_{skill}.mclip"
        terrain_rel = f"terrain/{idx:04d}.hf"
        save_clip(out / clip_rel, clip, skel)
        save_heightfield(out / terrain_rel, fld)
        entries.append(_entry(clip_rel, terrain_rel, skill, seed, provenance, parent))
        idx += 1
        return clip_rel

    for params in specs:
        seed = int(rng.integers(0, 2 ** 31 - 1))
        clip, spec, fld = synth_with_terrain(params, np.random.default_rng(seed), skel)
        parent_rel = pack(clip, fld, params.skill, seed, "synth", None)
        for _ in range(cfg.augments_per_clip):
            aug_seed = int(rng.integers(0, 2 ** 31 - 1))
            aug_rng = np.random.default_rng(aug_seed)
            if params.skill in COVERAGE:
                new_spec = _scaled_variant_spec(params.skill, spec, aug_rng)
                new_fld = generate(new_spec, np.random.default_rng(0))
            else:
                boxes = scatter_boxes(
                    replace(spec, kind="scatter", density=cfg.scatter_density,
                            start_x=0.8), aug_rng)
                new_fld = with_small_boxes(fld, boxes)
            aug_clip = augment(clip, new_fld, cfg.augment, skel)
            pack(aug_clip, new_fld, params.skill, aug_seed, "augmented", parent_rel)

    histogram: dict[str, int] = {}
    for e in entries:
        histogram[e["skill"]] = histogram.get(e["skill"], 0) + 1
    manifest = {
        "format_version": 1,
        "skeleton_hash": skel.hash(),
        "entries": entries,
        "skill_histogram": histogram,
        "counts": {
            "synth": sum(e["provenance"] == "synth" for e in entries),
            "augmented": sum(e["provenance"] == "augmented" for e in entries),
            "total": len(entries),
        },
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class LoadedDataset:
    skel: Skeleton
    clips: list[MotionClip]
    terrains: list[HeightField]
    entries: list[dict]


def load_dataset(path, skel: Skeleton | None = None) -> LoadedDataset:
    skel = skel or default_humanoid()
    root = Path(path)
    manifest_file = root / MANIFEST_NAME
    if not manifest_file.exists():
        raise ValidationError(f"no dataset manifest at {manifest_file}")
    manifest = json.loads(manifest_file.read_text())
    if manifest["skeleton_hash"] != skel.hash():
        raise ValidationError(f"{manifest_file}: dataset built for a different skeleton")
    clips, terrains = [], []
    for e in manifest["entries"]:
        clips.append(load_clip(root / e["clip"], expect_skeleton=skel))
        terrains.append(load_heightfield(root / e["terrain"]))
    return LoadedDataset(skel=skel, clips=clips, terrains=terrains,
                         entries=manifest["entries"])


def default_primitives(n_walks: int = 4) -> list[PrimitiveParams]:
    """The desk-scale primitive roster covering every skill family."""
    prims: list[PrimitiveParams] = []
    for i in range(n_walks):
        prims.append(PrimitiveParams(skill="walk", speed=0.5 + 0.2 * i, duration=3.0))
    prims.append(PrimitiveParams(skill="turn", speed=0.4, turn_rate=0.5, duration=3.0))
    prims.append(PrimitiveParams(skill="turn", speed=0.4, turn_rate=-0.5, duration=3.0))
    for h in (0.35, 0.5, 0.65, 0.75):
        prims.append(PrimitiveParams(skill="climb_up", obstacle_height=h, duration=3.6))
        prims.append(PrimitiveParams(skill="jump_down", obstacle_height=h, duration=3.4))
    for h in (0.25, 0.35, 0.45):
        prims.append(PrimitiveParams(skill="vault", obstacle_height=h, duration=3.2))
    for h in (0.15, 0.18, 0.20):
        prims.append(PrimitiveParams(skill="stairs_up", obstacle_height=h, steps=4, duration=3.4))
        prims.append(PrimitiveParams(skill="stairs_down", obstacle_height=h, steps=4, duration=3.4))
    return prims
