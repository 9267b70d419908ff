"""Adaptive-moment gradient descent with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class OptimizerError(RuntimeError):
    pass


class Adam:
    """Per-parameter first/second moment updates with bias correction.

    Deterministic: identical parameters, gradients, and step counts give
    bitwise-identical updates. A missing gradient is treated as zero.
    """

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(t.data) for _, t in self.params]
        self._v = [np.zeros_like(t.data) for _, t in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise OptimizerError(f"non-finite gradient for parameter '{name}' at step {t}")
            m = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            v = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            self._m[i] = m
            self._v[i] = v
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None
