"""Variance schedule for the denoising diffusion process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # (T,), beta_t for t = 1..T

    def __post_init__(self):
        b = self.betas
        if b.ndim != 1 or b.size < 1:
            raise ValidationError("betas must be a 1-d array")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ValidationError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < -1e-12):
            raise ValidationError("betas must be non-decreasing")
        abar = np.cumprod(1.0 - b)
        if abar[-1] >= 1e-2:
            raise ValidationError(
                f"terminal signal level {abar[-1]:.3g} too high; sampling from pure "
                "noise requires alpha_bar_T < 1e-2")
        object.__setattr__(self, "_abar", abar)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alpha_bars(self) -> np.ndarray:
        """Cumulative signal fraction, alpha_bar[t-1] for step t."""
        return self._abar

    def abar(self, t) -> np.ndarray:
        """alpha_bar at step(s) t in 1..T (t = 0 means clean data)."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValidationError(f"diffusion step out of range 1..{self.T}")
        padded = np.concatenate([[1.0], self._abar])
        return padded[t]

    @staticmethod
    def linear(T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.2) -> "NoiseSchedule":
        return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def sub_schedule(schedule: NoiseSchedule, K: int) -> list[int]:
    """K denoising steps, evenly strided in alpha_bar, strictly decreasing
    from T; K = T yields exactly [T, T-1, ..., 1]."""
    T = schedule.T
    if not 1 <= K <= T:
        raise ValidationError(f"denoising step count {K} outside 1..{T}")
    if K == T:
        return list(range(T, 0, -1))
    abar = schedule.alpha_bars
    targets = np.linspace(abar[T - 1], abar[0], K)
    taus: list[int] = []
    prev = T + 1
    for a in targets:
        cand = int(np.argmin(np.abs(abar - a))) + 1
        cand = min(cand, prev - 1)
        cand = max(cand, 1)
        taus.append(cand)
        prev = cand
    taus[0] = T
    return taus


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray,
                  schedule: NoiseSchedule) -> np.ndarray:
    """Noised sample sqrt(abar_t) x0 + sqrt(1 - abar_t) eps (t in 0..T)."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValidationError("noise must match the window shape")
    a = schedule.abar(t)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
