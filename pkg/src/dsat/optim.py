"""Adaptive-moment optimisation and the stepped learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import NumericError
from .tensor import Tensor

__all__ = ["Adam", "lr_schedule"]


def lr_schedule(lr0: float, epoch: int, halving_period: int = 250) -> float:
    """lr(e) = lr0 * 0.5^floor(e / halving_period); pure in the epoch index."""
    return lr0 * 0.5 ** (epoch // halving_period)


class Adam:
    """Adam with bias correction over an explicit parameter list.

    Parameters whose ``grad`` is None at ``step`` time are skipped
    entirely (their moments and effective timestep do not advance), so
    a parameter that never receives gradients is never perturbed.
    ``lr`` may be reassigned between steps by a schedule.
    """

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = [0 for _ in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {i} (shape {p.shape})")
            self._t[i] += 1
            t = self._t[i]
            m = self._m[i]
            v = self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment estimates and step counts, keyed by parameter position."""
        state: dict[str, np.ndarray] = {}
        for i in range(len(self.params)):
            state[f"m.{i}"] = self._m[i]
            state[f"v.{i}"] = self._v[i]
            state[f"t.{i}"] = np.array(float(self._t[i]), dtype=np.float32)
        return state

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for i, p in enumerate(self.params):
            m = np.asarray(state[f"m.{i}"], dtype=p.data.dtype)
            v = np.asarray(state[f"v.{i}"], dtype=p.data.dtype)
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ValueError(f"optimizer state {i} does not match parameter shape {p.shape}")
            self._m[i] = m.copy()
            self._v[i] = v.copy()
            self._t[i] = int(np.asarray(state[f"t.{i}"]).item())
