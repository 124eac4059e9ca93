import math

import numpy as np


def global_norm(params):
    total = 0.0
    for _, t in params.items():
        total += float(np.sum(t.grad * t.grad))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm):
    """Rescale all gradients so that their joint L2 norm is at most `max_norm`."""
    norm = global_norm(params)
    if max_norm is not None and norm > max_norm:
        factor = max_norm / norm
        for _, t in params.items():
            t.grad *= factor
    return norm


class Adam:
    """Adaptive moment estimation with a constant learning rate."""

    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.values) for name, p in params.items()}

    def step(self):
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.values -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
