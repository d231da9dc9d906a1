from .augment import AugmentConfig, augment, augment_detailed, augment_loss
from .build import (BuildConfig, LoadedDataset, build_dataset, default_primitives,
                    load_dataset, manifest_hash, max_clip_penetration)
from .synth import COVERAGE, SKILLS, PrimitiveParams, nominal_terrain, synth_clip, synth_with_terrain

__all__ = [
    "AugmentConfig", "augment", "augment_detailed", "augment_loss",
    "BuildConfig", "LoadedDataset", "build_dataset", "default_primitives",
    "load_dataset", "manifest_hash", "max_clip_penetration",
    "COVERAGE", "SKILLS", "PrimitiveParams", "nominal_terrain", "synth_clip",
    "synth_with_terrain",
]
