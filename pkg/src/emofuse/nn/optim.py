"""RMSProp with a per-parameter running mean of squared gradients."""

from __future__ import annotations

import numpy as np


class RmsProp:
    """acc <- rho*acc + (1-rho)*g^2 ; p <- p - lr * g / sqrt(acc + eps)."""

    def __init__(self, learning_rate=1e-4, rho=0.9, eps=1e-7):
        self.learning_rate = learning_rate
        self.rho = rho
        self.eps = eps
        self.acc: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, p in params.items():
            g = grads[name]
            acc = self.acc.get(name)
            if acc is None:
                acc = np.zeros_like(p)
            acc = self.rho * acc + (1.0 - self.rho) * (g * g)
            self.acc[name] = acc
            p -= (self.learning_rate * g / np.sqrt(acc + self.eps)).astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return self.acc

    def load_state(self, arrays: dict[str, np.ndarray]):
        self.acc = {k: np.array(v) for k, v in arrays.items()}
