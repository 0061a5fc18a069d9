import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import farasr.autodiff as ad
from farasr import seq2seq as s2s
from farasr.autodiff import Tensor

from helpers import fd_grad_entries, rel_err


def tiny_config(**kw):
    base = dict(
        encoder_layers=3, encoder_dim=16, pool_after=(1, 2, 3),
        decoder_dim=16, attn_dim=12, attn_filters=4, attn_kernel=5,
    )
    base.update(kw)
    return s2s.ModelConfig(**base)


def make_model(seed=0, **kw):
    return s2s.Seq2SeqModel(tiny_config(**kw), np.random.default_rng(seed))


def rand_feats(rng, t, b=1):
    return rng.normal(0, 1, size=(b, t, 40)).astype(np.float32)


# -- vocabulary ------------------------------------------------------------------


def test_vocab_bijective():
    v = s2s.Vocabulary()
    assert len(v) == 32
    ids = v.target_ids("ab c.")
    assert ids[-1] == v.eos
    assert v.ids_to_text(ids) == "ab c."


def test_vocab_unknown_char():
    v = s2s.Vocabulary()
    with pytest.raises(s2s.UnknownTokenError):
        v.target_ids("Q")


# -- encoder ---------------------------------------------------------------------


def test_encoder_time_compression_80():
    model = make_model()
    rng = np.random.default_rng(1)
    out = model.encode_batch(rand_feats(rng, 80), training=False)
    assert out.shape[1] == 10


def test_encoder_time_compression_81():
    model = make_model()
    rng = np.random.default_rng(2)
    out = model.encode_batch(rand_feats(rng, 81), training=False)
    assert out.shape[1] == math.ceil(81 / 8) == 11


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=8, max_value=200))
def test_encoder_time_compression_property(t):
    # oracle: repeated ceil-halving
    expected = t
    for _ in range(3):
        expected = math.ceil(expected / 2)
    model = test_encoder_time_compression_property._model
    out = model.encode_batch(np.zeros((1, t, 40), np.float32), training=False)
    assert out.shape[1] == expected == math.ceil(t / 8)


test_encoder_time_compression_property._model = make_model()


def test_encoder_rejects_short_input():
    model = make_model()
    with pytest.raises(ValueError, match="pad"):
        model.encode_batch(np.zeros((1, 7, 40), np.float32), training=False)


def test_encoder_eval_mode_deterministic_per_item():
    model = make_model()
    rng = np.random.default_rng(3)
    one = rand_feats(rng, 40)
    two = np.concatenate([one, one], axis=0)
    out = model.encode_batch(two, training=False)
    np.testing.assert_array_equal(out.data[0], out.data[1])


def test_encode_single_utterance_api():
    model = make_model()
    rng = np.random.default_rng(4)
    feats = rand_feats(rng, 40)[0]
    emb = model.encode(feats)
    assert isinstance(emb, s2s.EmbeddingSequence)
    assert emb.states.shape == (5, 16)
    assert emb.source_len == 40


# -- attention --------------------------------------------------------------------


def test_alignment_is_distribution():
    model = make_model()
    rng = np.random.default_rng(5)
    enc = model.encode_batch(rand_feats(rng, 48, b=2), training=False)
    state, context, align = model.initial_decoder_state(2, enc.shape[1])
    context, align = model.attend(state, enc, align)
    sums = align.data.sum(axis=1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-5)
    assert np.all(align.data >= 0)


def test_uniform_scores_give_uniform_alignment():
    out = ad.softmax(Tensor(np.full((1, 7), 3.25, dtype=np.float32)), axis=-1)
    np.testing.assert_allclose(out.data, 1.0 / 7, atol=1e-6)


def test_attend_saturates_to_one_hot_under_dominant_score():
    model = make_model()
    rng = np.random.default_rng(6)
    enc = model.encode_batch(rand_feats(rng, 48, b=1), training=False)
    state, context, align = model.initial_decoder_state(1, enc.shape[1])
    # scale the scoring vector so score margins exceed 20
    for _ in range(18):
        model.attn_v.data *= 2.0
        _, a = model.attend(state, enc, align)
        top2 = np.sort(a.data[0])[-2:]
        if top2[0] > 0 and np.log(top2[1] / top2[0]) >= 20:
            break
    context, a = model.attend(state, enc, align)
    j = int(np.argmax(a.data[0]))
    assert a.data[0, j] > 1.0 - 1e-6
    np.testing.assert_allclose(context.data[0], enc.data[0, j], atol=1e-4)


# -- decode step --------------------------------------------------------------------


def test_decode_step_log_probs_normalized():
    model = make_model()
    rng = np.random.default_rng(7)
    enc = model.encode_batch(rand_feats(rng, 40, b=2), training=False)
    state, context, align = model.initial_decoder_state(2, enc.shape[1])
    logp, *_ = model.decode_step(np.array([model.vocab.sos] * 2), state, context, align, enc)
    lse = np.log(np.sum(np.exp(logp.data), axis=1))
    np.testing.assert_allclose(lse, 0.0, atol=1e-5)


def test_decode_step_rejects_unknown_token():
    model = make_model()
    rng = np.random.default_rng(8)
    enc = model.encode_batch(rand_feats(rng, 40), training=False)
    state, context, align = model.initial_decoder_state(1, enc.shape[1])
    with pytest.raises(s2s.UnknownTokenError):
        model.decode_step(np.array([99]), state, context, align, enc)


def test_decode_step_deterministic():
    rng = np.random.default_rng(9)
    feats = rand_feats(rng, 40)
    outs = []
    for _ in range(2):
        model = make_model(seed=123)
        enc = model.encode_batch(feats, training=False)
        state, context, align = model.initial_decoder_state(1, enc.shape[1])
        logp, *_ = model.decode_step(np.array([model.vocab.sos]), state, context, align, enc)
        outs.append(logp.data.copy())
    np.testing.assert_array_equal(outs[0], outs[1])


def test_untrained_teacher_forced_ce_near_uniform():
    model = make_model(seed=11)
    rng = np.random.default_rng(12)
    enc = model.encode_batch(rand_feats(rng, 64, b=3), training=False)
    targets = s2s.pad_targets(
        [model.vocab.target_ids("abc"), model.vocab.target_ids("de fg"), model.vocab.target_ids("hij")],
        model.vocab.pad,
    )
    logp = model.teacher_forced_log_probs(enc, targets)
    loss = s2s.cross_entropy_loss(logp, targets, model.vocab.pad).item()
    uniform = math.log(len(model.vocab))
    assert abs(loss - uniform) / uniform < 0.10


# -- greedy decoding -----------------------------------------------------------------


def test_greedy_cap_when_eos_never_wins():
    model = make_model(seed=13)
    model.out_proj.b.data[model.vocab.eos] = -1e9
    rng = np.random.default_rng(14)
    feats = rand_feats(rng, 40)[0]
    hyp = model.greedy_decode(feats)
    t_prime = math.ceil(40 / 8)
    assert len(hyp.tokens) == 2 * t_prime


def test_greedy_deterministic():
    model = make_model(seed=15)
    rng = np.random.default_rng(16)
    feats = rand_feats(rng, 48)[0]
    a = model.greedy_decode(feats)
    b = model.greedy_decode(feats)
    assert a.tokens == b.tokens
    assert a.text == b.text


def test_overfit_single_utterance_emits_transcript():
    model = make_model(seed=17, encoder_dim=24, decoder_dim=24)
    rng = np.random.default_rng(18)
    feats = rand_feats(rng, 32)
    transcript = "cab"
    targets = s2s.pad_targets([model.vocab.target_ids(transcript)], model.vocab.pad)
    opt = ad.Adam(model.store.parameters(), lr=3e-3)
    loss_val = None
    for _ in range(300):
        model.store.zero_grads()
        enc = model.encode_batch(feats, training=True)
        logp = model.teacher_forced_log_probs(enc, targets)
        loss = s2s.cross_entropy_loss(logp, targets, model.vocab.pad)
        loss.backward()
        model.store.clip_grad_norm(5.0)
        opt.step()
        loss_val = loss.item()
        if loss_val < 0.01:
            break
    assert loss_val < 0.05
    hyp = model.greedy_decode(feats[0])
    assert hyp.text == transcript


# -- cross entropy -------------------------------------------------------------------


def test_ce_perfect_predictions_zero():
    targets = np.array([[0, 2, 1]])
    logp = np.full((1, 3, 4), -50.0, dtype=np.float32)
    for t, tok in enumerate(targets[0]):
        logp[0, t, tok] = 0.0
    loss = s2s.cross_entropy_loss(Tensor(logp), targets, pad_id=3)
    assert loss.item() == 0.0


def test_ce_uniform_is_log_vocab():
    v = 30
    targets = np.array([[1, 2, 3, 29]])
    logp = np.full((1, 4, v), -math.log(v), dtype=np.float32)
    loss = s2s.cross_entropy_loss(Tensor(logp), targets, pad_id=v - 1 + 1000)
    assert loss.item() == pytest.approx(math.log(30), rel=1e-5)


def test_ce_padding_masked():
    rng = np.random.default_rng(19)
    raw = rng.normal(size=(2, 4, 8)).astype(np.float32)
    logp = np.log(np.exp(raw) / np.exp(raw).sum(axis=-1, keepdims=True))
    targets = np.array([[1, 2, 7, 7], [3, 4, 5, 7]])  # 7 = pad
    base = s2s.cross_entropy_loss(Tensor(logp), targets, pad_id=7).item()
    # appending a fully padded column changes nothing
    logp_ext = np.concatenate([logp, rng.normal(size=(2, 1, 8)).astype(np.float32)], axis=1)
    targets_ext = np.concatenate([targets, np.full((2, 1), 7)], axis=1)
    ext = s2s.cross_entropy_loss(Tensor(logp_ext), targets_ext, pad_id=7).item()
    assert ext == pytest.approx(base, abs=1e-7)


def test_ce_length_mismatch_errors():
    logp = Tensor(np.zeros((1, 3, 5), np.float32))
    with pytest.raises(ad.ShapeError):
        s2s.cross_entropy_loss(logp, np.zeros((1, 4), dtype=np.int64), pad_id=4)


# -- end-to-end gradient check ---------------------------------------------------------


def test_end_to_end_gradients_match_fd():
    with ad.using_dtype(np.float64):
        model = s2s.Seq2SeqModel(
            s2s.ModelConfig(
                encoder_layers=3, encoder_dim=8, pool_after=(1, 2, 3),
                decoder_dim=8, attn_dim=6, attn_filters=3, attn_kernel=5,
            ),
            np.random.default_rng(21),
        )
        rng = np.random.default_rng(22)
        feats = rng.normal(size=(2, 16, 40))
        targets = s2s.pad_targets(
            [model.vocab.target_ids("ab"), model.vocab.target_ids("c")], model.vocab.pad
        )

        def forward():
            enc = model.encode_batch(feats, training=True, update_stats=False)
            logp = model.teacher_forced_log_probs(enc, targets)
            return s2s.cross_entropy_loss(logp, targets, model.vocab.pad)

        model.store.zero_grads()
        loss = forward()
        loss.backward()

        def value():
            with ad.no_grad():
                return forward().item()

        named = model.store.named_parameters()
        probe_rng = np.random.default_rng(23)
        for name in ["enc/l0/fwd/wx", "enc/l1/bwd/wh_ru", "enc/l0/bn/gamma",
                     "attn/v", "dec/out/w", "dec/embed/table", "attn/loc_kernel"]:
            p = named[name]
            entries = probe_rng.choice(p.data.size, size=min(4, p.data.size), replace=False)
            numeric = fd_grad_entries(value, p.data, entries, h=1e-4)
            for idx, num in numeric.items():
                ana = p.grad.reshape(-1)[idx]
                assert rel_err(ana, num) < 1e-3, (name, idx)
