"""Wall-clock latency benchmark for generator sampling."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..generator import Condition, Denoiser


@dataclass
class LatencyStats:
    p50_ms: float
    p95_ms: float
    max_ms: float
    calls: int
    steps: int

    def to_dict(self) -> dict:
        return {"p50_ms": self.p50_ms, "p95_ms": self.p95_ms, "max_ms": self.max_ms,
                "calls": self.calls, "steps": self.steps}


def bench_latency(den: Denoiser, n: int, steps: int = 2, warmup: int = 5,
                  seed: int = 0) -> LatencyStats:
    """Distribution of sample() wall-clock at the given step count."""
    if n < 1:
        raise ValidationError("latency benchmark needs n >= 1 calls")
    rng = np.random.default_rng(seed)
    f = den.feature_dim
    cond = Condition(heading=np.array([1.0, 0.0]),
                     scan=rng.normal(scale=0.1, size=den.cfg.scan.size),
                     past=rng.normal(scale=0.1, size=(2, f)))
    for _ in range(warmup):
        den.sample(cond, steps, np.random.default_rng(1))
    times = []
    for i in range(n):
        t0 = time.perf_counter()
        den.sample(cond, steps, np.random.default_rng(i))
        times.append((time.perf_counter() - t0) * 1e3)
    arr = np.array(times)
    return LatencyStats(p50_ms=float(np.percentile(arr, 50)),
                        p95_ms=float(np.percentile(arr, 95)),
                        max_ms=float(arr.max()), calls=n, steps=steps)
