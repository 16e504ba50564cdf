"""AdamW with parameter groups and decoupled weight decay."""

import numpy as np


class AdamW:
    """Groups are dicts {"params": [Tensor], "lr": float}; a plain parameter
    list becomes one group. Decay is decoupled: applied directly to the
    weights before the adaptive step, never mixed into the moments. A missing
    gradient counts as zero, so decay still shrinks untouched parameters.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        if params and isinstance(params[0], dict):
            self.groups = [dict(g) for g in params]
            for g in self.groups:
                g.setdefault("lr", lr)
        else:
            self.groups = [{"params": list(params), "lr": lr}]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {}
        self._v = {}

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def scale_lr(self, factor):
        for g in self.groups:
            g["lr"] *= factor

    @property
    def lrs(self):
        return [g["lr"] for g in self.groups]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for group in self.groups:
            lr = group["lr"]
            for p in group["params"]:
                grad = p.grad if p.grad is not None else np.zeros_like(p.data)
                key = id(p)
                m = self._m.get(key)
                if m is None:
                    m = np.zeros_like(p.data)
                    self._v[key] = np.zeros_like(p.data)
                v = self._v[key]
                if self.weight_decay:
                    p.data -= lr * self.weight_decay * p.data
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                self._m[key] = m
                self._v[key] = v
                p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
