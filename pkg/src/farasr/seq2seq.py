"""Attention-based encoder/decoder over character targets.

The encoder is a stack of bidirectional GRU layers with sequence-wise batch
norm; the time axis is halved after each of the first three layers, so the
embedding length is ceil(T/8).  The decoder is a single GRU with a hybrid
content+location attention and emits one character per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .frontend import N_MEL_BINS, FeatureSequence
from .layers import BatchNorm, BiRecurrent, GRULayer, Linear, TokenEmbedding, time_pool

DEFAULT_CHARS = "abcdefghijklmnopqrstuvwxyz '."
TIME_REDUCTION = 8  # three pairwise poolings


class UnknownTokenError(ValueError):
    pass


class Vocabulary:
    """Character inventory plus SOS/EOS/PAD specials; bijective both ways."""

    def __init__(self, chars=DEFAULT_CHARS):
        self.chars = list(chars)
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("duplicate characters in vocabulary")
        self.sos = len(self.chars)
        self.eos = len(self.chars) + 1
        self.pad = len(self.chars) + 2
        self._to_id = {c: i for i, c in enumerate(self.chars)}

    def __len__(self):
        return len(self.chars) + 3

    def char_to_id(self, ch):
        try:
            return self._to_id[ch]
        except KeyError:
            raise UnknownTokenError(f"character {ch!r} not in vocabulary") from None

    def target_ids(self, text):
        """Token ids for a transcript, terminated by EOS."""
        return [self.char_to_id(c) for c in text] + [self.eos]

    def ids_to_text(self, ids):
        out = []
        for i in ids:
            if i == self.eos:
                break
            if i < len(self.chars):
                out.append(self.chars[i])
        return "".join(out)

    def validate_id(self, token_id):
        if not 0 <= token_id < len(self):
            raise UnknownTokenError(f"token id {token_id} outside vocabulary of size {len(self)}")


@dataclass
class Hypothesis:
    tokens: list
    log_probs: list
    text: str


@dataclass
class EmbeddingSequence:
    states: np.ndarray  # (T', H)
    source_len: int

    def __post_init__(self):
        expected = math.ceil(self.source_len / TIME_REDUCTION)
        if self.states.shape[0] != expected:
            raise ValueError(
                f"embedding length {self.states.shape[0]} != ceil({self.source_len}/{TIME_REDUCTION})"
            )


@dataclass
class ModelConfig:
    encoder_layers: int = 3
    encoder_dim: int = 64
    pool_after: tuple = (1, 2, 3)
    pool_mode: str = "subsample"
    decoder_dim: int = 64
    attn_dim: int = 64
    attn_filters: int = 10
    attn_kernel: int = 11
    chars: str = DEFAULT_CHARS
    input_bins: int = N_MEL_BINS

    def __post_init__(self):
        if len(self.pool_after) != 3:
            raise ValueError("exactly three time poolings are required (T' == ceil(T/8))")
        if max(self.pool_after) > self.encoder_layers:
            raise ValueError("pool_after refers to a layer beyond encoder_layers")


class Seq2SeqModel:
    def __init__(self, config, rng):
        self.config = config
        self.vocab = Vocabulary(config.chars)
        self.store = ad.ParameterStore()
        store = self.store
        H = config.encoder_dim

        self.enc_layers = []
        self.enc_norms = []
        n_in = config.input_bins
        for i in range(config.encoder_layers):
            self.enc_layers.append(BiRecurrent(GRULayer, store, f"enc/l{i}", n_in, H, rng))
            self.enc_norms.append(BatchNorm(store, f"enc/l{i}/bn", H))
            n_in = H

        D = config.decoder_dim
        V = len(self.vocab)
        self.embed = TokenEmbedding(store, "dec/embed", V, D, rng)
        self.dec_cell = GRULayer(store, "dec/gru", D + H, D, rng)
        A = config.attn_dim
        self.attn_enc = Linear(store, "attn/enc", H, A, rng, bias=False)
        self.attn_dec = Linear(store, "attn/dec", D, A, rng, bias=True)
        self.attn_loc_kernel = store.parameter(
            "attn/loc_kernel",
            ad.init_uniform(rng, (config.attn_filters, 1, config.attn_kernel), 0.3),
        )
        self.attn_loc = Linear(store, "attn/loc", config.attn_filters, A, rng, bias=False)
        self.attn_v = store.parameter("attn/v", ad.init_uniform(rng, (A, 1), ad.fan_in_scale(A)))
        self.out_proj = Linear(store, "dec/out", D + H, V, rng)

    # -- encoder ---------------------------------------------------------------

    def encode_batch(self, feats, training, update_stats=True):
        """(B, T, bins) array -> (B, T', H) tensor of encoder states."""
        if feats.ndim != 3 or feats.shape[2] != self.config.input_bins:
            raise ad.ShapeError("encode", feats.shape, (None, None, self.config.input_bins))
        if feats.shape[1] < TIME_REDUCTION:
            raise ValueError(
                f"need at least {TIME_REDUCTION} frames, got {feats.shape[1]}; pad the features first"
            )
        x = Tensor(np.ascontiguousarray(feats, dtype=ad.default_dtype()))
        for i, (layer, norm) in enumerate(zip(self.enc_layers, self.enc_norms)):
            x = layer(x)
            B, T, H = x.data.shape
            x = norm(x.reshape(B * T, H), training, update_stats=update_stats).reshape(B, T, H)
            if (i + 1) in self.config.pool_after:
                x = time_pool(x, self.config.pool_mode)
        return x

    def encode(self, features):
        """Single-utterance embedding with frozen statistics (eval mode)."""
        frames = features.frames if isinstance(features, FeatureSequence) else np.asarray(features)
        with ad.no_grad():
            states = self.encode_batch(frames[None, :, :], training=False)
        return EmbeddingSequence(states.data[0].copy(), source_len=frames.shape[0])

    # -- attention ---------------------------------------------------------------

    def project_encoder(self, enc):
        B, Tp, H = enc.data.shape
        return self.attn_enc(enc.reshape(B * Tp, H)).reshape(B, Tp, self.config.attn_dim)

    def attend(self, dec_state, enc, prev_align, enc_proj=None):
        """Content+location attention -> (context (B,H), alignment (B,T'))."""
        B, Tp, H = enc.data.shape
        if Tp == 0:
            raise ad.ShapeError("attend", enc.data.shape)
        if enc_proj is None:
            enc_proj = self.project_encoder(enc)
        A = self.config.attn_dim
        loc = ad.conv1d_same(prev_align.reshape(B, 1, Tp), self.attn_loc_kernel)
        loc = self.attn_loc(loc.transpose(0, 2, 1).reshape(B * Tp, -1)).reshape(B, Tp, A)
        dec = self.attn_dec(dec_state).reshape(B, 1, A)
        scores = ad.matmul(ad.tanh(enc_proj + loc + dec).reshape(B * Tp, A), self.attn_v).reshape(B, Tp)
        align = ad.softmax(scores, axis=-1)
        context = ad.weighted_sum(align, enc)
        return context, align

    # -- decoding ------------------------------------------------------------------

    def initial_decoder_state(self, batch_size, t_prime):
        dt = ad.default_dtype()
        state = Tensor(np.zeros((batch_size, self.config.decoder_dim), dtype=dt))
        context = Tensor(np.zeros((batch_size, self.config.encoder_dim), dtype=dt))
        align = Tensor(np.full((batch_size, t_prime), 1.0 / t_prime, dtype=dt))
        return state, context, align

    def decode_step(self, prev_tokens, state, context, prev_align, enc, enc_proj=None):
        """One teacher-forced/greedy step -> (log-probs (B,V), state, context, align)."""
        prev_tokens = np.asarray(prev_tokens, dtype=np.int64)
        for tok in prev_tokens.ravel():
            self.vocab.validate_id(int(tok))
        emb = self.embed(prev_tokens)
        inp = ad.concat([emb, context], axis=1)
        state = self.dec_cell.step(inp, state)
        context, align = self.attend(state, enc, prev_align, enc_proj)
        logits = self.out_proj(ad.concat([state, context], axis=1))
        return ad.log_softmax(logits, axis=-1), state, context, align

    def teacher_forced_log_probs(self, enc, targets):
        """Stacked per-step log-probs (B, L, V) for teacher-forced targets."""
        B, Tp, _ = enc.data.shape
        L = targets.shape[1]
        enc_proj = self.project_encoder(enc)
        state, context, align = self.initial_decoder_state(B, Tp)
        inputs = np.concatenate(
            [np.full((B, 1), self.vocab.sos, dtype=np.int64), targets[:, :-1]], axis=1
        )
        inputs = np.where(inputs == self.vocab.pad, self.vocab.pad, inputs)
        steps = []
        for t in range(L):
            logp, state, context, align = self.decode_step(
                inputs[:, t], state, context, align, enc, enc_proj
            )
            steps.append(logp.reshape(B, 1, len(self.vocab)))
        return ad.concat(steps, axis=1)

    def greedy_decode_batch(self, enc, max_len=None):
        """Argmax decoding; stops at EOS or the 2*T' cap."""
        B, Tp, _ = enc.data.shape
        if max_len is None:
            max_len = 2 * Tp
        with ad.no_grad():
            enc_proj = self.project_encoder(enc)
            state, context, align = self.initial_decoder_state(B, Tp)
            tokens = np.full((B,), self.vocab.sos, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            out_tokens = [[] for _ in range(B)]
            out_logps = [[] for _ in range(B)]
            for _ in range(max_len):
                logp, state, context, align = self.decode_step(
                    tokens, state, context, align, enc, enc_proj
                )
                tokens = np.argmax(logp.data, axis=1)
                for b in range(B):
                    if not done[b]:
                        out_tokens[b].append(int(tokens[b]))
                        out_logps[b].append(float(logp.data[b, tokens[b]]))
                        if tokens[b] == self.vocab.eos:
                            done[b] = True
                if done.all():
                    break
        return [
            Hypothesis(toks, lps, self.vocab.ids_to_text(toks))
            for toks, lps in zip(out_tokens, out_logps)
        ]

    def greedy_decode(self, features, max_len=None):
        frames = features.frames if isinstance(features, FeatureSequence) else np.asarray(features)
        with ad.no_grad():
            enc = self.encode_batch(frames[None, :, :], training=False)
            return self.greedy_decode_batch(enc, max_len)[0]

    # -- checkpointing ----------------------------------------------------------------

    def state_arrays(self):
        return self.store.state_arrays()


def cross_entropy_loss(log_probs, targets, pad_id):
    """Mean negative log-likelihood per non-padding token.

    log_probs: (B, L, V) tensor of per-step log-probabilities.
    targets:   (B, L) int array ending with EOS, PAD after that.
    """
    B, L, V = log_probs.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (B, L):
        raise ad.ShapeError("cross_entropy_loss", log_probs.data.shape, targets.shape)
    mask = (targets != pad_id).astype(log_probs.data.dtype)
    n_tokens = float(mask.sum())
    if n_tokens == 0:
        raise ValueError("cross_entropy_loss: all positions are padding")
    safe_targets = np.where(targets == pad_id, 0, targets)
    picked = log_probs[np.arange(B)[:, None], np.arange(L)[None, :], safe_targets]
    return -(picked * Tensor(mask)).sum() / n_tokens


def pad_targets(token_lists, pad_id):
    """Stack variable-length token lists into a (B, L) PAD-filled array."""
    L = max(len(t) for t in token_lists)
    out = np.full((len(token_lists), L), pad_id, dtype=np.int64)
    for i, toks in enumerate(token_lists):
        out[i, : len(toks)] = toks
    return out
