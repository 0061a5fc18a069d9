"""Named trainable parameters and the stores that own them."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, default_dtype


class Parameter(Tensor):
    """A named leaf tensor that optimizers update in place."""

    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class ParameterStore:
    """Registry of uniquely named parameters plus non-trainable buffers.

    One store per model (seq-to-seq or critic); checkpointing, gradient
    clipping and weight clipping all operate on a store.
    """

    def __init__(self):
        self._params = {}
        self._buffers = {}

    def parameter(self, name, data):
        if name in self._params or name in self._buffers:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def buffer(self, name, data):
        """Non-trainable state (e.g. batch-norm running stats); checkpointed."""
        if name in self._params or name in self._buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(data, dtype=default_dtype())
        self._buffers[name] = arr
        return arr

    def parameters(self):
        return list(self._params.values())

    def named_parameters(self):
        return dict(self._params)

    def named_buffers(self):
        return dict(self._buffers)

    def num_values(self):
        return sum(p.data.size for p in self._params.values())

    def zero_grads(self):
        for p in self._params.values():
            if p.grad is None or p.grad.shape != p.data.shape:
                p.grad = np.zeros_like(p.data)
            else:
                p.grad.fill(0.0)

    def grad_norm(self):
        total = 0.0
        for p in self._params.values():
            if p.grad is not None:
                total += float(np.sum(np.square(p.grad, dtype=np.float64)))
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm):
        """Scale all gradients so their global L2 norm is at most max_norm."""
        norm = self.grad_norm()
        if norm > max_norm and norm > 0.0:
            scale = max_norm / norm
            for p in self._params.values():
                if p.grad is not None:
                    p.grad *= scale
        return norm

    def clip_values(self, c):
        """Clamp every parameter value into [-c, c] in place."""
        if c <= 0:
            raise ValueError(f"clip bound must be positive, got {c}")
        for p in self._params.values():
            np.clip(p.data, -c, c, out=p.data)

    def max_abs_value(self):
        return max(float(np.max(np.abs(p.data))) for p in self._params.values())

    def state_arrays(self):
        """All persistent arrays (parameters then buffers) by name."""
        out = {name: p.data for name, p in self._params.items()}
        out.update(self._buffers)
        return out

    def load_state_arrays(self, arrays):
        """Copy values in from a checkpoint dict, validating names/shapes."""
        own = self.state_arrays()
        missing = sorted(set(own) - set(arrays))
        if missing:
            raise ValueError(f"checkpoint is missing entries: {missing}")
        for name, target in own.items():
            src = arrays[name]
            if tuple(src.shape) != tuple(target.shape):
                raise ValueError(
                    f"checkpoint entry {name!r} has shape {tuple(src.shape)}, model expects {tuple(target.shape)}"
                )
            target[...] = src.astype(target.dtype)


def init_uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape).astype(default_dtype())


def fan_in_scale(fan_in):
    return float(1.0 / np.sqrt(fan_in))
