"""Dense tensors with reverse-mode automatic differentiation.

Every value lives in a numpy array, float32 by default.  Each operation
records a closure mapping the output gradient onto its inputs; ``backward``
on a scalar loss walks the recorded graph once in reverse topological
order, accumulating into ``.grad`` additively (a value used k times
receives k contributions).

``using_dtype(np.float64)`` switches the whole engine to 64-bit so finite
difference checks can reach tight tolerances; training stays in 32-bit.
``debug_checks(True)`` makes every forward op assert finite outputs.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform; names the op and the shapes."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class NumericsError(FloatingPointError):
    """A forward op produced NaN/Inf (raised only with debug checks on)."""


class GraphError(RuntimeError):
    """backward() misuse: non-scalar loss or repeated call on one graph."""


_state = {"dtype": np.float32, "grad": True, "debug": False}


def default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype):
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _state["dtype"] = dtype


@contextmanager
def using_dtype(dtype):
    prev = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


def grad_enabled():
    return _state["grad"]


@contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def debug_checks(enabled=True):
    _state["debug"] = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad=False):
        dt = _state["dtype"]
        if isinstance(data, np.ndarray) and data.dtype == dt:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dt)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._backward_done = False

    @classmethod
    def _op(cls, op_name, data, parents, backward):
        """Wrap a forward result, recording parents/backward when grads are on."""
        if _state["debug"] and not np.all(np.isfinite(data)):
            raise NumericsError(f"{op_name}: non-finite values in forward output")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._backward_done = False
        if _state["grad"]:
            parents = tuple(p for p in parents if p.requires_grad)
            if parents:
                out.requires_grad = True
                out._parents = parents
                out._backward = backward
                return out
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def _accum(self, contribution):
        if self.requires_grad:
            self.grad += contribution

    def backward(self):
        """Populate .grad on every reachable requires-grad tensor."""
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        if self._backward_done:
            raise GraphError("backward() called twice on the same graph; rerun the forward pass")
        self._backward_done = True
        if not self.requires_grad:
            return

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        for node in topo:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out_data = self.data + other.data

            def bwd(g):
                self._accum(_unbroadcast(g, self.data.shape))
                other._accum(_unbroadcast(g, other.data.shape))

            return Tensor._op("add", out_data, (self, other), bwd)
        out_data = self.data + other

        def bwd_s(g):
            self._accum(_unbroadcast(g, self.data.shape))

        return Tensor._op("add", out_data, (self,), bwd_s)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            out_data = self.data - other.data

            def bwd(g):
                self._accum(_unbroadcast(g, self.data.shape))
                other._accum(_unbroadcast(-g, other.data.shape))

            return Tensor._op("sub", out_data, (self, other), bwd)
        out_data = self.data - other

        def bwd_s(g):
            self._accum(_unbroadcast(g, self.data.shape))

        return Tensor._op("sub", out_data, (self,), bwd_s)

    def __rsub__(self, other):
        out_data = other - self.data

        def bwd(g):
            self._accum(_unbroadcast(-g, self.data.shape))

        return Tensor._op("rsub", out_data, (self,), bwd)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out_data = self.data * other.data

            def bwd(g):
                self._accum(_unbroadcast(g * other.data, self.data.shape))
                other._accum(_unbroadcast(g * self.data, other.data.shape))

            return Tensor._op("mul", out_data, (self, other), bwd)
        out_data = self.data * other

        def bwd_s(g):
            self._accum(_unbroadcast(g * other, self.data.shape))

        return Tensor._op("mul", out_data, (self,), bwd_s)

    __rmul__ = __mul__

    def __neg__(self):
        out_data = -self.data

        def bwd(g):
            self._accum(-g)

        return Tensor._op("neg", out_data, (self,), bwd)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            out_data = self.data / other.data

            def bwd(g):
                self._accum(_unbroadcast(g / other.data, self.data.shape))
                other._accum(_unbroadcast(-g * self.data / (other.data * other.data), other.data.shape))

            return Tensor._op("div", out_data, (self, other), bwd)
        return self * (1.0 / other)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.data.shape
        out_data = self.data.reshape(shape)

        def bwd(g):
            self._accum(g.reshape(orig))

        return Tensor._op("reshape", out_data, (self,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inv = tuple(np.argsort(axes))
        out_data = np.ascontiguousarray(self.data.transpose(axes))

        def bwd(g):
            self._accum(g.transpose(inv))

        return Tensor._op("transpose", out_data, (self,), bwd)

    def __getitem__(self, key):
        out_data = self.data[key]
        advanced = isinstance(key, np.ndarray) or (
            isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
        )

        def bwd(g):
            if not self.requires_grad:
                return
            if advanced:
                np.add.at(self.grad, key, g)
            else:
                self.grad[key] += g

        return Tensor._op("slice", np.ascontiguousarray(out_data), (self,), bwd)

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        return Tensor._op("sum", np.asarray(out_data), (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis] if isinstance(axis, int) else int(np.prod([self.data.shape[a] for a in axis]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    """2-D matrix product with gradient support."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    out_data = a.data @ b.data

    def bwd(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return Tensor._op("matmul", out_data, (a, b), bwd)


def weighted_sum(weights, states):
    """Batched reduction sum_t weights[b,t] * states[b,t,:] -> (B, H)."""
    if weights.data.shape != states.data.shape[:2]:
        raise ShapeError("weighted_sum", weights.data.shape, states.data.shape)
    out_data = np.einsum("bt,bth->bh", weights.data, states.data)

    def bwd(g):
        weights._accum(np.einsum("bh,bth->bt", g, states.data))
        states._accum(np.einsum("bt,bh->bth", weights.data, g))

    return Tensor._op("weighted_sum", out_data, (weights, states), bwd)


def embedding_lookup(table, ids):
    """Row lookup table[ids]; gradients scatter-add into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    out_data = np.ascontiguousarray(table.data[ids])

    def bwd(g):
        np.add.at(table.grad, ids, g)

    return Tensor._op("embedding_lookup", out_data, (table,), bwd)


# -- pointwise nonlinearities ------------------------------------------------


def sigmoid(x):
    out_data = _sigmoid_np(x.data)

    def bwd(g):
        x._accum(g * out_data * (1.0 - out_data))

    return Tensor._op("sigmoid", out_data, (x,), bwd)


def _sigmoid_np(v):
    # clipping keeps exp() in range; exact for |v| < 60 either way
    return 1.0 / (1.0 + np.exp(-np.clip(v, -60.0, 60.0)))


def tanh(x):
    out_data = np.tanh(x.data)

    def bwd(g):
        x._accum(g * (1.0 - out_data * out_data))

    return Tensor._op("tanh", out_data, (x,), bwd)


def leaky_relu(x, slope=0.2):
    out_data = np.where(x.data >= 0, x.data, slope * x.data)

    def bwd(g):
        x._accum(g * np.where(x.data >= 0, 1.0, slope).astype(x.data.dtype))

    return Tensor._op("leaky_relu", out_data, (x,), bwd)


def exp(x):
    out_data = np.exp(x.data)

    def bwd(g):
        x._accum(g * out_data)

    return Tensor._op("exp", out_data, (x,), bwd)


def log(x):
    out_data = np.log(x.data)

    def bwd(g):
        x._accum(g / x.data)

    return Tensor._op("log", out_data, (x,), bwd)


def sqrt(x):
    out_data = np.sqrt(x.data)

    def bwd(g):
        x._accum(g * 0.5 / out_data)

    return Tensor._op("sqrt", out_data, (x,), bwd)


def absolute(x):
    out_data = np.abs(x.data)

    def bwd(g):
        x._accum(g * np.sign(x.data))

    return Tensor._op("abs", out_data, (x,), bwd)


def maximum(a, b):
    """Elementwise max; at ties the gradient goes to the first operand."""
    out_data = np.maximum(a.data, b.data)

    def bwd(g):
        take_a = a.data >= b.data
        a._accum(_unbroadcast(g * take_a, a.data.shape))
        b._accum(_unbroadcast(g * ~take_a, b.data.shape))

    return Tensor._op("maximum", out_data, (a, b), bwd)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accum(out_data * (g - dot))

    return Tensor._op("softmax", out_data, (x,), bwd)


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def bwd(g):
        x._accum(g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return Tensor._op("log_softmax", out_data, (x,), bwd)


def concat(tensors, axis=0):
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accum(g[tuple(idx)])

    return Tensor._op("concat", out_data, tuple(tensors), bwd)


def mean_pool(x, axis):
    """Mean over one axis; used to pool per-step scores into one value."""
    return x.mean(axis=axis)


def flip_time(x):
    """Reverse axis 1 of a (B, T, H) tensor."""
    out_data = np.ascontiguousarray(x.data[:, ::-1])

    def bwd(g):
        x._accum(g[:, ::-1])

    return Tensor._op("flip_time", out_data, (x,), bwd)


# -- convolution -------------------------------------------------------------


def conv2d(x, kernel, stride=(1, 1)):
    """Valid 2-D convolution (cross-correlation) with arbitrary stride.

    x: (B, C, H, W), kernel: (O, C, KH, KW) -> (B, O, HO, WO) where
    HO = (H - KH)//sh + 1 and WO = (W - KW)//sw + 1.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4 or x.data.shape[1] != kernel.data.shape[1]:
        raise ShapeError("conv2d", x.data.shape, kernel.data.shape)
    sh, sw = stride
    B, C, H, W = x.data.shape
    O, _, KH, KW = kernel.data.shape
    if H < KH or W < KW:
        raise ShapeError("conv2d", x.data.shape, kernel.data.shape)
    HO = (H - KH) // sh + 1
    WO = (W - KW) // sw + 1
    out_data = np.zeros((B, O, HO, WO), dtype=x.data.dtype)
    for p in range(KH):
        for q in range(KW):
            xs = x.data[:, :, p : p + sh * HO : sh, q : q + sw * WO : sw]
            out_data += np.einsum("bchw,oc->bohw", xs, kernel.data[:, :, p, q])

    def bwd(g):
        for p in range(KH):
            for q in range(KW):
                xs = x.data[:, :, p : p + sh * HO : sh, q : q + sw * WO : sw]
                if kernel.requires_grad:
                    kernel.grad[:, :, p, q] += np.einsum("bohw,bchw->oc", g, xs)
                if x.requires_grad:
                    x.grad[:, :, p : p + sh * HO : sh, q : q + sw * WO : sw] += np.einsum(
                        "bohw,oc->bchw", g, kernel.data[:, :, p, q]
                    )

    return Tensor._op("conv2d", out_data, (x, kernel), bwd)


def conv1d_same(x, kernel):
    """1-D convolution over time with zero 'same' padding.

    x: (B, C, T), kernel: (O, C, K) -> (B, O, T).  Used for the location
    term of the attention mechanism (K odd).
    """
    if x.data.ndim != 3 or kernel.data.ndim != 3 or x.data.shape[1] != kernel.data.shape[1]:
        raise ShapeError("conv1d_same", x.data.shape, kernel.data.shape)
    B, C, T = x.data.shape
    O, _, K = kernel.data.shape
    pad = (K - 1) // 2
    xp = np.zeros((B, C, T + K - 1), dtype=x.data.dtype)
    xp[:, :, pad : pad + T] = x.data
    out_data = np.zeros((B, O, T), dtype=x.data.dtype)
    for q in range(K):
        out_data += np.einsum("bct,oc->bot", xp[:, :, q : q + T], kernel.data[:, :, q])

    def bwd(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for q in range(K):
            if kernel.requires_grad:
                kernel.grad[:, :, q] += np.einsum("bot,bct->oc", g, xp[:, :, q : q + T])
            if gxp is not None:
                gxp[:, :, q : q + T] += np.einsum("bot,oc->bct", g, kernel.data[:, :, q])
        if gxp is not None:
            x.grad += gxp[:, :, pad : pad + T]

    return Tensor._op("conv1d_same", out_data, (x, kernel), bwd)


# -- batch normalization ------------------------------------------------------


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5, update_stats=True):
    """Normalize (N, F) per feature over axis 0.

    Train mode uses batch statistics and (optionally) folds them into the
    running buffers; eval mode is the deterministic affine map built from
    the running buffers.  Callers flatten (batch, time) into N, which gives
    sequence-wise normalization for recurrent stacks.
    """
    if x.data.ndim != 2 or x.data.shape[1] != gamma.data.shape[0]:
        raise ShapeError("batch_norm", x.data.shape, gamma.data.shape)
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        out_data = gamma.data * xhat + beta.data

        def bwd(g):
            if gamma.requires_grad:
                gamma.grad += (g * xhat).sum(axis=0)
            if beta.requires_grad:
                beta.grad += g.sum(axis=0)
            if x.requires_grad:
                gx = g * gamma.data
                x.grad += inv_std * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))

        return Tensor._op("batch_norm", out_data, (x, gamma, beta), bwd)

    inv_std = 1.0 / np.sqrt(running_var + eps)
    scale = gamma.data * inv_std
    out_data = scale * (x.data - running_mean) + beta.data

    def bwd_eval(g):
        if gamma.requires_grad:
            gamma.grad += (g * (x.data - running_mean) * inv_std).sum(axis=0)
        if beta.requires_grad:
            beta.grad += g.sum(axis=0)
        if x.requires_grad:
            x.grad += g * scale

    return Tensor._op("batch_norm", out_data, (x, gamma, beta), bwd_eval)
