"""Neural layers shared by the recognizer and the critic.

The GRU/LSTM time loops run as single graph nodes with hand-written
backward passes (plain numpy inside), which keeps graph overhead off the
per-timestep path.  Their gradients are covered by the same finite
difference checks as the primitive ops.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    ParameterStore,
    Tensor,
    batch_norm,
    concat,
    fan_in_scale,
    flip_time,
    init_uniform,
    matmul,
    maximum,
)
from .autodiff.tensor import _sigmoid_np


class Linear:
    def __init__(self, store, name, n_in, n_out, rng, bias=True):
        scale = fan_in_scale(n_in)
        self.w = store.parameter(f"{name}/w", init_uniform(rng, (n_in, n_out), scale))
        self.b = store.parameter(f"{name}/b", np.zeros(n_out, dtype=self.w.data.dtype)) if bias else None

    def __call__(self, x):
        y = matmul(x, self.w)
        return y + self.b if self.b is not None else y


class TokenEmbedding:
    def __init__(self, store, name, vocab_size, dim, rng):
        self.table = store.parameter(f"{name}/table", init_uniform(rng, (vocab_size, dim), 0.1))

    def __call__(self, ids):
        from .autodiff import embedding_lookup

        return embedding_lookup(self.table, ids)


class BatchNorm:
    """Per-feature normalization over axis 0 of a (N, F) tensor."""

    def __init__(self, store, name, num_features, momentum=0.1, eps=1e-5):
        self.gamma = store.parameter(f"{name}/gamma", np.ones(num_features, dtype=_dtype()))
        self.beta = store.parameter(f"{name}/beta", np.zeros(num_features, dtype=_dtype()))
        self.running_mean = store.buffer(f"{name}/running_mean", np.zeros(num_features))
        self.running_var = store.buffer(f"{name}/running_var", np.ones(num_features))
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training, update_stats=True):
        return batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training, momentum=self.momentum, eps=self.eps, update_stats=update_stats,
        )


def _dtype():
    from .autodiff import default_dtype

    return default_dtype()


def gru_scan(xg, wh_ru, wh_c):
    """Run a GRU over time given precomputed input projections.

    xg: (B, T, 3H) = x @ Wx + b laid out as [reset, update, candidate].
    Returns hidden states (B, T, H); the initial state is zero.
    """
    B, T, threeH = xg.data.shape
    H = threeH // 3
    if wh_ru.data.shape != (H, 2 * H) or wh_c.data.shape != (H, H):
        from .autodiff import ShapeError

        raise ShapeError("gru_scan", xg.data.shape, wh_ru.data.shape, wh_c.data.shape)

    xgd = xg.data
    whr = wh_ru.data
    whc = wh_c.data
    hs = np.empty((B, T, H), dtype=xgd.dtype)
    r_all = np.empty((B, T, H), dtype=xgd.dtype)
    u_all = np.empty((B, T, H), dtype=xgd.dtype)
    c_all = np.empty((B, T, H), dtype=xgd.dtype)
    h = np.zeros((B, H), dtype=xgd.dtype)
    for t in range(T):
        ru = _sigmoid_np(xgd[:, t, : 2 * H] + h @ whr)
        r = ru[:, :H]
        u = ru[:, H:]
        c = np.tanh(xgd[:, t, 2 * H :] + (r * h) @ whc)
        r_all[:, t] = r
        u_all[:, t] = u
        c_all[:, t] = c
        h = u * h + (1.0 - u) * c
        hs[:, t] = h

    def bwd(g):
        dxg = np.zeros_like(xgd) if xg.requires_grad else None
        dwhr = np.zeros_like(whr)
        dwhc = np.zeros_like(whc)
        dh = np.zeros((B, H), dtype=xgd.dtype)
        for t in range(T - 1, -1, -1):
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H), dtype=xgd.dtype)
            r = r_all[:, t]
            u = u_all[:, t]
            c = c_all[:, t]
            dht = g[:, t] + dh
            du_pre = dht * (h_prev - c) * u * (1.0 - u)
            dc_pre = dht * (1.0 - u) * (1.0 - c * c)
            d_rh = dc_pre @ whc.T
            dwhc += (r * h_prev).T @ dc_pre
            dr_pre = d_rh * h_prev * r * (1.0 - r)
            d_ru_pre = np.concatenate([dr_pre, du_pre], axis=1)
            dwhr += h_prev.T @ d_ru_pre
            if dxg is not None:
                dxg[:, t, : 2 * H] = d_ru_pre
                dxg[:, t, 2 * H :] = dc_pre
            dh = dht * u + d_rh * r + d_ru_pre @ whr.T
        if dxg is not None:
            xg.grad += dxg
        wh_ru._accum(dwhr)
        wh_c._accum(dwhc)

    return Tensor._op("gru_scan", hs, (xg, wh_ru, wh_c), bwd)


def lstm_scan(xg, wh):
    """Run an LSTM over time given precomputed input projections.

    xg: (B, T, 4H) = x @ Wx + b laid out as [input, forget, output, cell].
    Returns hidden states (B, T, H); initial hidden and cell are zero.
    """
    B, T, fourH = xg.data.shape
    H = fourH // 4
    if wh.data.shape != (H, 4 * H):
        from .autodiff import ShapeError

        raise ShapeError("lstm_scan", xg.data.shape, wh.data.shape)

    xgd = xg.data
    whd = wh.data
    hs = np.empty((B, T, H), dtype=xgd.dtype)
    gates_all = np.empty((B, T, 4 * H), dtype=xgd.dtype)
    c_all = np.empty((B, T, H), dtype=xgd.dtype)
    h = np.zeros((B, H), dtype=xgd.dtype)
    c = np.zeros((B, H), dtype=xgd.dtype)
    for t in range(T):
        pre = xgd[:, t] + h @ whd
        ifo = _sigmoid_np(pre[:, : 3 * H])
        g_ = np.tanh(pre[:, 3 * H :])
        i = ifo[:, :H]
        f = ifo[:, H : 2 * H]
        o = ifo[:, 2 * H : 3 * H]
        c = f * c + i * g_
        h = o * np.tanh(c)
        gates_all[:, t, : 3 * H] = ifo
        gates_all[:, t, 3 * H :] = g_
        c_all[:, t] = c
        hs[:, t] = h

    def bwd(g):
        dxg = np.zeros_like(xgd) if xg.requires_grad else None
        dwh = np.zeros_like(whd)
        dh = np.zeros((B, H), dtype=xgd.dtype)
        dc = np.zeros((B, H), dtype=xgd.dtype)
        for t in range(T - 1, -1, -1):
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H), dtype=xgd.dtype)
            c_prev = c_all[:, t - 1] if t > 0 else np.zeros((B, H), dtype=xgd.dtype)
            i = gates_all[:, t, :H]
            f = gates_all[:, t, H : 2 * H]
            o = gates_all[:, t, 2 * H : 3 * H]
            g_ = gates_all[:, t, 3 * H :]
            ct = c_all[:, t]
            tc = np.tanh(ct)
            dht = g[:, t] + dh
            do_pre = dht * tc * o * (1.0 - o)
            dct = dht * o * (1.0 - tc * tc) + dc
            di_pre = dct * g_ * i * (1.0 - i)
            df_pre = dct * c_prev * f * (1.0 - f)
            dg_pre = dct * i * (1.0 - g_ * g_)
            dpre = np.concatenate([di_pre, df_pre, do_pre, dg_pre], axis=1)
            dwh += h_prev.T @ dpre
            if dxg is not None:
                dxg[:, t] = dpre
            dh = dpre @ whd.T
            dc = dct * f
        if dxg is not None:
            xg.grad += dxg
        wh._accum(dwh)

    return Tensor._op("lstm_scan", hs, (xg, wh), bwd)


class GRULayer:
    def __init__(self, store, name, n_in, n_hidden, rng):
        sx = fan_in_scale(n_in)
        sh = fan_in_scale(n_hidden)
        dt = _dtype()
        self.wx = store.parameter(f"{name}/wx", init_uniform(rng, (n_in, 3 * n_hidden), sx))
        self.bx = store.parameter(f"{name}/bx", np.zeros(3 * n_hidden, dtype=dt))
        self.wh_ru = store.parameter(f"{name}/wh_ru", init_uniform(rng, (n_hidden, 2 * n_hidden), sh))
        self.wh_c = store.parameter(f"{name}/wh_c", init_uniform(rng, (n_hidden, n_hidden), sh))
        self.n_hidden = n_hidden

    def project_inputs(self, x):
        B, T, D = x.data.shape
        xg = matmul(x.reshape(B * T, D), self.wx) + self.bx
        return xg.reshape(B, T, 3 * self.n_hidden)

    def __call__(self, x):
        return gru_scan(self.project_inputs(x), self.wh_ru, self.wh_c)

    def step(self, x_t, h):
        """Single step for decoding: x_t (B, D), h (B, H) -> new h."""
        from .autodiff import sigmoid, tanh

        xg = matmul(x_t, self.wx) + self.bx
        H = self.n_hidden
        ru = sigmoid(xg[:, : 2 * H] + matmul(h, self.wh_ru))
        r = ru[:, :H]
        u = ru[:, H:]
        c = tanh(xg[:, 2 * H :] + matmul(r * h, self.wh_c))
        return u * h + (1.0 - u) * c


class LSTMLayer:
    def __init__(self, store, name, n_in, n_hidden, rng):
        sx = fan_in_scale(n_in)
        sh = fan_in_scale(n_hidden)
        dt = _dtype()
        self.wx = store.parameter(f"{name}/wx", init_uniform(rng, (n_in, 4 * n_hidden), sx))
        self.bx = store.parameter(f"{name}/bx", np.zeros(4 * n_hidden, dtype=dt))
        self.wh = store.parameter(f"{name}/wh", init_uniform(rng, (n_hidden, 4 * n_hidden), sh))
        self.n_hidden = n_hidden

    def __call__(self, x):
        B, T, D = x.data.shape
        xg = matmul(x.reshape(B * T, D), self.wx) + self.bx
        return lstm_scan(xg.reshape(B, T, 4 * self.n_hidden), self.wh)


class BiRecurrent:
    """Bidirectional wrapper; forward/backward outputs are summed so the
    layer's output width stays the cell width."""

    def __init__(self, cell_cls, store, name, n_in, n_hidden, rng):
        self.fwd = cell_cls(store, f"{name}/fwd", n_in, n_hidden, rng)
        self.bwd = cell_cls(store, f"{name}/bwd", n_in, n_hidden, rng)

    def __call__(self, x):
        out_f = self.fwd(x)
        out_b = flip_time(self.bwd(flip_time(x)))
        return out_f + out_b


def time_pool(x, mode="subsample"):
    """Halve the time axis of (B, T, H): keep every 2nd step, or pairwise max."""
    if mode == "subsample":
        return x[:, ::2]
    if mode == "max":
        B, T, H = x.data.shape
        if T % 2:
            x = concat([x, x[:, T - 1 : T]], axis=1)
        return maximum(x[:, 0::2], x[:, 1::2])
    raise ValueError(f"unknown pooling mode {mode!r}")


class Conv2dLayer:
    """Convolution + per-channel batch norm + leaky ReLU (0.2 slope)."""

    def __init__(self, store, name, in_ch, out_ch, kernel, stride, rng, slope=0.2):
        kh, kw = kernel
        scale = fan_in_scale(in_ch * kh * kw)
        self.kernel = store.parameter(f"{name}/kernel", init_uniform(rng, (out_ch, in_ch, kh, kw), scale))
        self.bn = BatchNorm(store, f"{name}/bn", out_ch)
        self.stride = tuple(stride)
        self.slope = slope
        self.out_ch = out_ch

    def __call__(self, x, training):
        from .autodiff import conv2d, leaky_relu

        y = conv2d(x, self.kernel, stride=self.stride)
        B, C, H, W = y.data.shape
        flat = y.transpose(0, 2, 3, 1).reshape(B * H * W, C)
        normed = self.bn(flat, training)
        y = normed.reshape(B, H, W, C).transpose(0, 3, 1, 2)
        return leaky_relu(y, self.slope)
