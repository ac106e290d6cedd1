"""Adam optimizer over dicts of named parameter arrays."""

from __future__ import annotations

import numpy as np

from .autodiff import ContractError, NonFiniteError


class Adam:
    """Bias-corrected Adam. State: first/second moments per parameter, step t.

    `step` is functional: it returns a new params dict and leaves the input
    arrays untouched, so tapes recorded against the old arrays stay valid.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if lr <= 0:
            raise ContractError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ContractError(f"betas must lie in [0, 1): {beta1}, {beta2}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        out = {}
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
            if g.shape != p.shape:
                raise ContractError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p)
                v = np.zeros_like(p)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            self.m[name] = m
            self.v[name] = v
            mhat = m / p.dtype.type(bc1)
            vhat = v / p.dtype.type(bc2)
            out[name] = p - p.dtype.type(self.lr) * mhat / (np.sqrt(vhat) + p.dtype.type(self.eps))
        return out


def count_parameters(params) -> int:
    """Total scalar count across named parameters (dict or object with .parameters())."""
    if hasattr(params, "parameters"):
        params = params.parameters()
    return int(sum(int(np.asarray(p).size) for p in params.values()))
