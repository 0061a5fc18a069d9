import numpy as np
import pytest

import farasr.autodiff as ad
from farasr import layers
from farasr.autodiff import Tensor

from helpers import fd_grad, rel_err


def _fd_check(build_loss, arrays, tol=1e-4, h=1e-4):
    """build_loss(list of Tensors) -> scalar Tensor; checks every array's grad."""
    ts = []
    for a in arrays:
        t = Tensor(a)
        t.requires_grad = True
        ts.append(t)
    loss = build_loss(ts)
    loss.backward()
    analytic = [t.grad for t in ts]

    def f(arrs):
        with ad.no_grad():
            return build_loss([Tensor(a) for a in arrs]).item()

    numeric = fd_grad(f, [a.copy() for a in arrays], h=h)
    for i, (ag, ng) in enumerate(zip(analytic, numeric)):
        assert rel_err(ag, ng) < tol, f"input {i}"


@pytest.mark.parametrize("seed", range(10))
def test_gru_scan_grads_match_fd(seed):
    rng = np.random.default_rng(700 + seed)
    with ad.using_dtype(np.float64):
        B, T, H = 2, 5, 4
        xg = rng.normal(size=(B, T, 3 * H)) * 0.5
        wh_ru = rng.normal(size=(H, 2 * H)) * 0.5
        wh_c = rng.normal(size=(H, H)) * 0.5
        probe = rng.normal(size=(B, T, H))

        def loss(ts):
            return (layers.gru_scan(ts[0], ts[1], ts[2]) * Tensor(probe)).sum()

        _fd_check(loss, [xg, wh_ru, wh_c])


@pytest.mark.parametrize("seed", range(10))
def test_lstm_scan_grads_match_fd(seed):
    rng = np.random.default_rng(800 + seed)
    with ad.using_dtype(np.float64):
        B, T, H = 2, 5, 3
        xg = rng.normal(size=(B, T, 4 * H)) * 0.5
        wh = rng.normal(size=(H, 4 * H)) * 0.5
        probe = rng.normal(size=(B, T, H))

        def loss(ts):
            return (layers.lstm_scan(ts[0], ts[1]) * Tensor(probe)).sum()

        _fd_check(loss, [xg, wh])


def test_gru_layer_end_to_end_fd():
    # two stacked GRU layers driven through real parameters
    rng = np.random.default_rng(900)
    with ad.using_dtype(np.float64):
        store = ad.ParameterStore()
        l1 = layers.GRULayer(store, "l1", 3, 4, rng)
        l2 = layers.GRULayer(store, "l2", 4, 4, rng)
        x = Tensor(rng.normal(size=(2, 6, 3)))
        probe = rng.normal(size=(2, 6, 4))
        store.zero_grads()
        loss = (l2(l1(x)) * Tensor(probe)).sum()
        loss.backward()
        params = store.parameters()
        analytic = [p.grad.copy() for p in params]

        def f(arrs):
            for p, a in zip(params, arrs):
                p.data[...] = a
            with ad.no_grad():
                return (l2(l1(x)) * Tensor(probe)).sum().item()

        numeric = fd_grad(f, [p.data.copy() for p in params])
        for ag, ng in zip(analytic, numeric):
            assert rel_err(ag, ng) < 1e-4


def test_bidirectional_sums_directions():
    rng = np.random.default_rng(901)
    store = ad.ParameterStore()
    bi = layers.BiRecurrent(layers.GRULayer, store, "bi", 3, 5, rng)
    x = Tensor(rng.normal(size=(2, 7, 3)).astype(np.float32))
    out = bi(x)
    assert out.shape == (2, 7, 5)
    manual = bi.fwd(x).data + bi.bwd(ad.flip_time(x)).data[:, ::-1]
    np.testing.assert_allclose(out.data, manual, rtol=1e-5)


def test_time_pool_subsample_takes_every_second():
    x = Tensor(np.arange(12, dtype=np.float32).reshape(1, 6, 2))
    out = layers.time_pool(x)
    np.testing.assert_array_equal(out.data, x.data[:, ::2])
    # ceil semantics for odd lengths
    x5 = Tensor(np.zeros((1, 5, 2), np.float32))
    assert layers.time_pool(x5).shape == (1, 3, 2)


def test_time_pool_max_variant():
    x = Tensor(np.array([[[1.0], [5.0], [2.0], [0.5], [9.0]]], dtype=np.float32))
    out = layers.time_pool(x, mode="max")
    np.testing.assert_array_equal(out.data.ravel(), [5.0, 2.0, 9.0])


def test_grulayer_step_matches_scan():
    rng = np.random.default_rng(902)
    store = ad.ParameterStore()
    gru = layers.GRULayer(store, "g", 3, 4, rng)
    x = Tensor(rng.normal(size=(2, 5, 3)).astype(np.float32))
    scan_out = gru(x).data
    h = Tensor(np.zeros((2, 4), np.float32))
    for t in range(5):
        h = gru.step(x[:, t], h)
        np.testing.assert_allclose(h.data, scan_out[:, t], atol=1e-6)


def test_conv_block_shapes_and_fd():
    rng = np.random.default_rng(903)
    with ad.using_dtype(np.float64):
        store = ad.ParameterStore()
        blk = layers.Conv2dLayer(store, "c", 1, 3, kernel=(3, 2), stride=(2, 1), rng=rng)
        x = Tensor(rng.normal(size=(2, 1, 8, 6)))
        out = blk(x, training=True)
        assert out.shape == (2, 3, 3, 5)

        probe = rng.normal(size=out.data.shape)
        params = store.parameters()
        store.zero_grads()
        loss = (blk(x, training=True) * Tensor(probe)).sum()
        loss.backward()
        analytic = [p.grad.copy() for p in params]

        def f(arrs):
            for p, a in zip(params, arrs):
                p.data[...] = a
            with ad.no_grad():
                return (blk(x, training=True) * Tensor(probe)).sum().item()

        numeric = fd_grad(f, [p.data.copy() for p in params])
        for ag, ng in zip(analytic, numeric):
            assert rel_err(ag, ng) < 1e-4
