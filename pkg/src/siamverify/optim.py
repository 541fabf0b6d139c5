"""Adam optimizer with bias correction."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class Adam:
    """Standard Adam: first/second moment estimates with bias correction.

    Gradients are cleared after every step.  Parameters are deduplicated
    by identity so shared (twin) tensors are updated exactly once.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 0.0001,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        seen: set[int] = set()
        self.params: list[Tensor] = []
        for p in params:
            if id(p) not in seen:
                seen.add(id(p))
                self.params.append(p)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                name = p.name or "<unnamed>"
                raise ContractError(f"adam step: parameter {name} has no gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)).astype(p.dtype, copy=False)
            p.clear_grad()
