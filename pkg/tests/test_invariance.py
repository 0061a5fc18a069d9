import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

import farasr.autodiff as ad
from farasr import invariance as inv
from farasr.autodiff import Tensor

from helpers import fd_grad, rel_err


# -- Eq-style penalty -----------------------------------------------------------


def test_penalty_zero_iff_equal():
    z = np.array([[1.0, -2.0], [0.5, 3.0]], dtype=np.float32)
    assert inv.l1_distance_penalty(z, z.copy()).item() == 0.0


def test_penalty_maximal_case():
    val = inv.l1_distance_penalty(np.array([1.0, 1.0]), np.array([0.0, 0.0]), eps=1e-8).item()
    assert val == pytest.approx(2.0 / (2.0 + 1e-8), rel=1e-6)


def test_penalty_hand_example_one_third():
    val = inv.l1_distance_penalty(np.array([2.0, 0.0]), np.array([1.0, 0.0]), eps=0.0).item()
    assert val == pytest.approx(1.0 / 3.0, abs=1e-7)


def test_penalty_shape_mismatch_names_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2,\).*\(3,\)"):
        inv.l1_distance_penalty(np.zeros(2), np.zeros(3))


@settings(max_examples=60, deadline=None)
@given(
    hnp.arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
    hnp.arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
)
def test_penalty_bounded_and_symmetric(a, b):
    # strict upper bound needs 64-bit: in float32 the eps term can round away
    with ad.using_dtype(np.float64):
        pen = inv.l1_distance_penalty(a, b).item()
        assert 0.0 <= pen < 1.0
        assert pen == pytest.approx(inv.l1_distance_penalty(b, a).item(), abs=1e-7)
    pen32 = inv.l1_distance_penalty(a, b).item()
    assert 0.0 <= pen32 <= 1.0


def test_penalty_invariant_to_joint_permutation():
    rng = np.random.default_rng(0)
    a = rng.normal(size=12)
    b = rng.normal(size=12)
    perm = rng.permutation(12)
    base = inv.l1_distance_penalty(a, b, eps=0.0).item()
    permuted = inv.l1_distance_penalty(a[perm], b[perm], eps=0.0).item()
    assert permuted == pytest.approx(base, abs=1e-7)


def test_penalty_scale_invariance_exact_at_eps_zero():
    rng = np.random.default_rng(1)
    with ad.using_dtype(np.float64):
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(4, 5))
        base = inv.l1_distance_penalty(a, b, eps=0.0).item()
        for alpha in (2.0, 0.5, 8.0):  # exact binary scalings
            scaled = inv.l1_distance_penalty(alpha * a, alpha * b, eps=0.0).item()
            assert scaled == base
        assert inv.l1_distance_penalty(3.0 * a, 3.0 * b, eps=0.0).item() == pytest.approx(base, rel=1e-12)


def test_penalty_batch_matches_single():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(3, 4, 5)).astype(np.float32)
    zt = rng.normal(size=(3, 4, 5)).astype(np.float32)
    batch = inv.l1_penalty_batch(Tensor(z), Tensor(zt), eps=1e-8).data
    for b in range(3):
        single = inv.l1_distance_penalty(z[b], zt[b], eps=1e-8).item()
        assert batch[b] == pytest.approx(single, rel=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_penalty_grads_match_fd(seed):
    rng = np.random.default_rng(40 + seed)
    with ad.using_dtype(np.float64):
        a = rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.3
        b = rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.3
        ta, tb = Tensor(a), Tensor(b)
        ta.requires_grad = tb.requires_grad = True
        inv.l1_distance_penalty(ta, tb).backward()

        def f(arrs):
            with ad.no_grad():
                return inv.l1_distance_penalty(Tensor(arrs[0]), Tensor(arrs[1])).item()

        numeric = fd_grad(f, [a.copy(), b.copy()])
        assert rel_err(ta.grad, numeric[0]) < 1e-4
        assert rel_err(tb.grad, numeric[1]) < 1e-4


# -- enhancer config ---------------------------------------------------------------


def test_config_validation():
    inv.EnhancerConfig(mode="wgan").validate()
    with pytest.raises(ValueError):
        inv.EnhancerConfig(mode="wat").validate()
    with pytest.raises(ValueError):
        inv.EnhancerConfig(mode="l1", weight=-1.0).validate()
    with pytest.raises(ValueError):
        inv.EnhancerConfig(mode="wgan", clip=0.0).validate()
    with pytest.raises(ValueError):
        inv.EnhancerConfig(mode="wgan", n_critic=0).validate()
    with pytest.raises(ValueError):
        inv.EnhancerConfig(mode="l1", stability_eps=0.0).validate()


# -- critic --------------------------------------------------------------------------


def desk_critic(embed_dim=16, seed=0, **kw):
    cfg = inv.CriticConfig(
        block1=((4, (5, 2), (3, 1)), (8, (3, 2), (2, 1))),
        rnn1=8,
        block2=((8, (3, 2), (2, 1)), (8, (3, 2), (1, 1))),
        rnn2=8,
        **kw,
    )
    return inv.Critic(cfg, embed_dim, np.random.default_rng(seed))


def test_critic_output_in_unit_interval():
    critic = desk_critic()
    rng = np.random.default_rng(3)
    emb = Tensor(rng.normal(size=(3, 9, 16)).astype(np.float32))
    out = critic(emb, training=True)
    assert out.shape == (3,)
    assert np.all(out.data > 0.0) and np.all(out.data < 1.0)


def test_critic_score_single_utterance():
    critic = desk_critic()
    rng = np.random.default_rng(4)
    score = critic_score = inv.critic_score(critic, rng.normal(size=(9, 16)).astype(np.float32))
    assert 0.0 < score < 1.0


def test_critic_empty_embedding_errors():
    critic = desk_critic()
    with pytest.raises(ad.ShapeError):
        critic(Tensor(np.zeros((1, 0, 16), np.float32)), training=False)
    with pytest.raises(ad.ShapeError):
        inv.critic_score(critic, np.zeros((0, 16), np.float32))


def test_pool_constant_scores_is_sigmoid():
    critic = desk_critic()
    s = 0.731
    scores = Tensor(np.full((2, 6, 1), s, dtype=np.float32))
    out = critic.pool_scores(scores)
    expected = 1.0 / (1.0 + np.exp(-s))
    np.testing.assert_allclose(out.data, expected, rtol=1e-6)


def test_pool_tiled_scores_unchanged():
    critic = desk_critic()
    rng = np.random.default_rng(5)
    scores = rng.normal(size=(1, 5, 1)).astype(np.float32)
    once = critic.pool_scores(Tensor(scores)).data[0]
    twice = critic.pool_scores(Tensor(np.concatenate([scores, scores], axis=1))).data[0]
    assert twice == pytest.approx(once, abs=1e-7)


def test_pool_without_sigmoid_unbounded():
    critic = desk_critic(use_sigmoid=False)
    scores = Tensor(np.full((1, 4, 1), 8.0, dtype=np.float32))
    assert critic.pool_scores(scores).data[0] == pytest.approx(8.0)


def test_critic_min_time_steps():
    cfg = inv.CriticConfig(
        block1=((4, (5, 2), (3, 1)), (8, (3, 2), (2, 1))),
        block2=((8, (3, 2), (2, 1)), (8, (3, 2), (1, 1))),
    )
    assert cfg.min_time_steps == 5
    assert inv.FULL_CRITIC.min_time_steps == 8


# -- EM objective ----------------------------------------------------------------------


def test_em_identical_batches_zero():
    critic = desk_critic()
    rng = np.random.default_rng(6)
    emb = rng.normal(size=(2, 8, 16)).astype(np.float32)
    c_obj, g_obj = inv.em_losses(critic, Tensor(emb), Tensor(emb.copy()), training=True)
    assert c_obj.item() == 0.0


def test_em_constant_critic_zero_objective():
    critic = desk_critic()
    critic.score_proj.w.data[...] = 0.0
    critic.score_proj.b.data[...] = 0.0
    rng = np.random.default_rng(7)
    clean = Tensor(rng.normal(size=(2, 8, 16)).astype(np.float32))
    noisy = Tensor(rng.normal(size=(2, 8, 16)).astype(np.float32))
    c_obj, g_obj = inv.em_losses(critic, clean, noisy, training=True)
    assert c_obj.item() == pytest.approx(0.0, abs=1e-7)
    assert g_obj.item() == pytest.approx(-0.5, abs=1e-6)  # sigmoid(0) pooled


def test_em_sign_convention():
    critic = desk_critic()
    rng = np.random.default_rng(8)
    clean = Tensor(rng.normal(size=(2, 8, 16)).astype(np.float32))
    noisy = Tensor(rng.normal(size=(2, 8, 16)).astype(np.float32))
    with ad.no_grad():
        _, g_obj = inv.em_losses(critic, clean, noisy, training=False)
        noisy_scores = critic(noisy, training=False).data
    assert g_obj.item() == pytest.approx(-float(noisy_scores.mean()), abs=1e-6)


def test_em_batch_mismatch_errors():
    critic = desk_critic()
    with pytest.raises(ad.ShapeError):
        inv.em_losses(critic, Tensor(np.zeros((2, 8, 16), np.float32)), Tensor(np.zeros((3, 8, 16), np.float32)))


# -- weight clipping ----------------------------------------------------------------------


def test_clip_weights_example_and_idempotence():
    critic = desk_critic()
    some = critic.store.parameters()[0]
    some.data.flat[0] = 0.1
    some.data.flat[1] = -0.2
    inv.clip_weights(critic, 0.05)
    assert some.data.flat[0] == pytest.approx(0.05)
    assert some.data.flat[1] == pytest.approx(-0.05)
    assert critic.store.max_abs_value() <= 0.05 + 1e-9
    snapshot = {p.name: p.data.copy() for p in critic.store.parameters()}
    inv.clip_weights(critic, 0.05)
    for p in critic.store.parameters():
        np.testing.assert_array_equal(p.data, snapshot[p.name])


def test_clip_tiny_bound_collapses_to_zero():
    critic = desk_critic()
    inv.clip_weights(critic, 1e-12)
    assert critic.store.max_abs_value() <= 1e-12


# -- critic ascent smoke test ----------------------------------------------------------------


def test_critic_ascent_increases_separable_objective():
    # frozen "encoder": two separable Gaussian clusters of embeddings
    rng = np.random.default_rng(9)
    critic = desk_critic(seed=10)
    clean = Tensor((rng.normal(0.6, 0.1, size=(8, 8, 16))).astype(np.float32))
    noisy = Tensor((rng.normal(-0.6, 0.1, size=(8, 8, 16))).astype(np.float32))
    opt = ad.RMSPropAscent(critic.store.parameters(), lr=2e-3)
    objectives = []
    for _ in range(50):
        critic.store.zero_grads()
        c_obj, _ = inv.em_losses(critic, clean, noisy, training=True)
        c_obj.backward()
        opt.step()
        inv.clip_weights(critic, 0.05)
        objectives.append(c_obj.item())
    assert all(b >= a - 1e-6 for a, b in zip(objectives, objectives[1:]))
    assert objectives[-1] > objectives[0]
