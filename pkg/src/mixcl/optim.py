"""Adam with bias correction."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from mixcl.autodiff import ShapeError, Tensor

__all__ = ["Adam", "NonFiniteGradientError", "check_finite"]


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf."""


def check_finite(grads: Mapping[str, np.ndarray], step: int | None = None) -> Mapping[str, np.ndarray]:
    """Return ``grads`` unchanged, raising if any entry is NaN or infinite."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            kind = "NaN" if np.any(np.isnan(g)) else "inf"
            at = f" at step {step}" if step is not None else ""
            raise NonFiniteGradientError(f"{kind} gradient for parameter {name}{at}")
    return grads


class Adam:
    """Adam over a named parameter collection.

    Parameters whose ``grad`` is None after backward (e.g. unused in the
    graph) are treated as having a zero gradient.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
            grads[name] = g
        check_finite(grads, self.t + 1)

        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
