"""The two parameter-update rules the training loop needs.

Adam performs bias-corrected gradient *descent* on the recognizer; the
critic instead ascends its objective with RMS-normalized steps (the update
adds lr * g / sqrt(s + delta) rather than subtracting).
"""

from __future__ import annotations

import numpy as np


class MissingGradError(RuntimeError):
    pass


def _check_grads(params, who):
    for p in params:
        if p.grad is None:
            raise MissingGradError(f"{who}: parameter {p.name!r} has no gradient; run backward() first")


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        _check_grads(self.params, "Adam")
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_arrays(self, prefix):
        out = {}
        for p, m, v in zip(self.params, self._m, self._v):
            out[f"{prefix}/{p.name}/m"] = m
            out[f"{prefix}/{p.name}/v"] = v
        return out


class RMSPropAscent:
    """Gradient-ascent RMSProp: w <- w + lr * g / sqrt(s + delta)."""

    def __init__(self, params, lr=5e-5, rho=0.9, delta=1e-8):
        self.params = list(params)
        self.lr = lr
        self.rho = rho
        self.delta = delta
        self.step_count = 0
        self._s = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        _check_grads(self.params, "RMSPropAscent")
        self.step_count += 1
        for p, s in zip(self.params, self._s):
            g = p.grad
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p.data += self.lr * g / np.sqrt(s + self.delta)

    def state_arrays(self, prefix):
        return {f"{prefix}/{p.name}/s": s for p, s in zip(self.params, self._s)}
