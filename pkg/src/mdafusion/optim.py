"""Adam optimizer with decoupled weight decay.

Bias-corrected moment estimates drive the step; the weight-decay term is
applied outside the moments (scaled by the learning rate), so decay never
leaks into the adaptive denominators. Default decay rate is 1e-4.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Deterministic Adam with decoupled weight decay.

    State (per-parameter first/second moments, step counter) is created at
    construction; moments shape-match their parameters.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=1e-4):
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        """One update from the gradients stored on the parameters.

        A parameter with ``grad is None`` is treated as zero-gradient (it
        still receives weight decay).
        """
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter shape {p.data.shape}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = p.data - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                         + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
