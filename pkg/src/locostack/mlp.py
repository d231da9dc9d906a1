"""Plain MLP over flat float64 arrays: tanh hidden layers, linear output,
fast numpy inference path and a tape path for training."""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor
from .errors import ValidationError


class Mlp:
    """Tanh-hidden MLP (smooth activations keep finite-difference gradient
    checks meaningful); linear output layer."""

    def __init__(self, in_dim: int, out_dim: int, hidden: tuple[int, ...],
                 rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = tuple(hidden)
        self.params: list[Tensor] = []
        sizes = [in_dim, *hidden, out_dim]
        for a, b in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((a, b)) * np.sqrt(1.0 / a)
            self.params.append(Tensor(w, requires_grad=True))
            self.params.append(Tensor(np.zeros(b), requires_grad=True))

    @property
    def param_count(self) -> int:
        return sum(p.data.size for p in self.params)

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Fast inference path (no tape)."""
        h = np.asarray(x, dtype=np.float64)
        n = len(self.params) // 2
        for i in range(n):
            h = h @ self.params[2 * i].data + self.params[2 * i + 1].data
            if i < n - 1:
                h = np.tanh(h)
        return h

    def forward_t(self, x: Tensor) -> Tensor:
        h = x
        n = len(self.params) // 2
        for i in range(n):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n - 1:
                h = h.tanh()
        return h

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.params])

    def load_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.param_count:
            raise ValidationError(
                f"parameter vector has {vec.size} entries, net needs {self.param_count}")
        at = 0
        for p in self.params:
            n = p.data.size
            p.data = vec[at:at + n].reshape(p.data.shape).copy()
            at += n

    def grad_vector(self) -> np.ndarray:
        return np.concatenate([
            (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
            for p in self.params])

    def param_hash(self) -> str:
        return hashlib.sha256(self.param_vector().astype("<f8").tobytes()).hexdigest()[:16]
