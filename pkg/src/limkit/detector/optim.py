"""SGD with classic momentum and L2 weight decay folded into the velocity."""

from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, params: dict, lr=0.0001, momentum=0.9, weight_decay=0.0005):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            v = self.momentum * self.velocity[name] + g + self.weight_decay * p.data
            self.velocity[name] = v.astype(p.data.dtype, copy=False)
            p.data = (p.data - self.lr * v).astype(p.data.dtype, copy=False)


def sgd_update(params: dict, grads: dict, velocity: dict, lr=0.0001, momentum=0.9, weight_decay=0.0005):
    """Functional form on plain arrays: returns ``(new_params, new_velocity)``."""
    new_p, new_v = {}, {}
    for k, p in params.items():
        v = momentum * velocity.get(k, 0.0) + grads[k] + weight_decay * p
        new_v[k] = v
        new_p[k] = p - lr * v
    return new_p, new_v
