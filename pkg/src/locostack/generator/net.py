"""Denoiser backbone: the shared MLP over the flattened noisy window,
conditioning vector, and a sinusoidal timestep embedding."""

from __future__ import annotations

import numpy as np

from ..mlp import Mlp

TEMB_DIM = 16


def timestep_embedding(t, dim: int = TEMB_DIM) -> np.ndarray:
    """Sinusoidal embedding of integer step(s) t; shape (..., dim)."""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


DenoiserNet = Mlp
