from .model import (Denoiser, GeneratorConfig, TrainCurve, compute_stats,
                    holdout_reconstruction, load_model, make_denoiser, save_model,
                    train, training_loss)
from .net import TEMB_DIM, DenoiserNet, timestep_embedding
from .schedule import NoiseSchedule, forward_noise, sub_schedule
from .window import (HORIZON_DEFAULT, Anchor, Condition, WindowSample, anchor_from_frame,
                     canonicalize, decanonicalize, extract_windows)

__all__ = [
    "Denoiser", "GeneratorConfig", "TrainCurve", "compute_stats",
    "holdout_reconstruction", "load_model", "make_denoiser", "save_model", "train",
    "training_loss", "TEMB_DIM", "DenoiserNet", "timestep_embedding",
    "NoiseSchedule", "forward_noise", "sub_schedule", "HORIZON_DEFAULT", "Anchor",
    "Condition", "WindowSample", "anchor_from_frame", "canonicalize", "decanonicalize",
    "extract_windows",
]
