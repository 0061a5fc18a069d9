"""Embedding-invariance objectives: the normalized L1 penalty and the critic.

Two ways to pull clean and far-field encoder embeddings together:

* a normalized L1 distance ||z - z~||_1 / (||z||_1 + ||z~||_1 + eps), added
  to the recognition loss with weight `weight`;
* a critic network scoring whole embeddings as clean-like, trained by
  gradient ascent on mean(f(clean)) - mean(f(noisy)) with its weights
  clipped into [-c, c] after every update, while the encoder learns to
  raise f on far-field embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .layers import Conv2dLayer, LSTMLayer, BiRecurrent, Linear

ENHANCER_MODES = ("none", "l1", "wgan")


@dataclass
class EnhancerConfig:
    mode: str = "none"
    weight: float = 1.0           # loss weight on the invariance term
    stability_eps: float = 1e-8   # denominator constant of the L1 penalty
    clip: float = 0.05            # critic weight clip bound
    n_critic: int = 5             # critic iterations per outer step
    warmup_steps: int = 3000      # outer steps without critic-term encoder grads
    noise_sigma: float = 0.001    # input-prior noise fed to the generator path

    def validate(self):
        if self.mode not in ENHANCER_MODES:
            raise ValueError(f"enhancer mode must be one of {ENHANCER_MODES}, got {self.mode!r}")
        if self.weight < 0:
            raise ValueError(f"enhancer weight must be >= 0, got {self.weight}")
        if self.stability_eps <= 0:
            raise ValueError(f"stability_eps must be > 0, got {self.stability_eps}")
        if self.mode == "wgan":
            if self.clip <= 0:
                raise ValueError(f"clip must be > 0 in wgan mode, got {self.clip}")
            if self.n_critic < 1:
                raise ValueError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        return self


def l1_distance_penalty(z, z_tilde, eps=1e-8):
    """Normalized L1 distance between two embeddings; scalar in [0, 1)."""
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=ad.default_dtype()))
    z_tilde = z_tilde if isinstance(z_tilde, Tensor) else Tensor(np.asarray(z_tilde, dtype=ad.default_dtype()))
    if z.data.shape != z_tilde.data.shape:
        raise ad.ShapeError("l1_distance_penalty", z.data.shape, z_tilde.data.shape)
    num = ad.absolute(z - z_tilde).sum()
    den = ad.absolute(z).sum() + ad.absolute(z_tilde).sum() + eps
    return num / den


def l1_penalty_batch(z, z_tilde, eps=1e-8):
    """Per-utterance normalized L1 penalties for (B, T', H) batches -> (B,)."""
    if z.data.shape != z_tilde.data.shape:
        raise ad.ShapeError("l1_penalty_batch", z.data.shape, z_tilde.data.shape)
    num = ad.absolute(z - z_tilde).sum(axis=(1, 2))
    den = ad.absolute(z).sum(axis=(1, 2)) + ad.absolute(z_tilde).sum(axis=(1, 2)) + eps
    return num / den


@dataclass
class CriticConfig:
    """Critic stack: two conv blocks, two bidirectional LSTMs, per-step
    linear score, optional sigmoid, mean pool over time.

    Each conv entry is (filters, (kh, kw), (sh, sw)) over a (feature)x(time)
    map; time strides stay 1 so the per-step scores align with time.
    """

    block1: tuple = ((32, (7, 2), (5, 1)), (64, (3, 3), (2, 1)))
    rnn1: int = 32
    block2: tuple = ((64, (3, 3), (2, 1)), (96, (3, 3), (1, 1)))
    rnn2: int = 32
    use_sigmoid: bool = True

    @property
    def min_time_steps(self):
        shrink = sum(k[1][1] - 1 for k in self.block1) + sum(k[1][1] - 1 for k in self.block2)
        return shrink + 1


class Critic:
    """Scores an embedding sequence as clean-like: scalar per utterance."""

    def __init__(self, config, embed_dim, rng):
        self.config = config
        self.store = ParameterStore()
        store = self.store

        def conv_block(prefix, specs, in_ch, height):
            layers = []
            for i, (filters, kernel, stride) in enumerate(specs):
                layers.append(
                    Conv2dLayer(store, f"{prefix}/conv{i}", in_ch, filters, kernel, stride, rng)
                )
                height = (height - kernel[0]) // stride[0] + 1
                if height < 1:
                    raise ValueError(
                        f"critic conv stack collapses the feature axis (embed_dim={embed_dim})"
                    )
                in_ch = filters
            return layers, in_ch, height

        self.block1, ch1, h1 = conv_block("b1", config.block1, 1, embed_dim)
        self.rnn1 = BiRecurrent(LSTMLayer, store, "rnn1", ch1 * h1, config.rnn1, rng)
        self.block2, ch2, h2 = conv_block("b2", config.block2, 1, config.rnn1)
        self.rnn2 = BiRecurrent(LSTMLayer, store, "rnn2", ch2 * h2, config.rnn2, rng)
        self.score_proj = Linear(store, "score", config.rnn2, 1, rng)

    def _run_block(self, x, block, training):
        for layer in block:
            x = layer(x, training)
        return x

    def per_step_scores(self, emb, training):
        """(B, T', H) embeddings -> (B, W, 1) pre-pool scores."""
        if emb.data.ndim != 3 or emb.data.shape[1] == 0:
            raise ad.ShapeError("critic", emb.data.shape)
        B, Tp, H = emb.data.shape
        x = emb.transpose(0, 2, 1).reshape(B, 1, H, Tp)
        x = self._run_block(x, self.block1, training)
        _, C, Hf, W = x.data.shape
        x = self.rnn1(x.transpose(0, 3, 1, 2).reshape(B, W, C * Hf))
        x = x.transpose(0, 2, 1).reshape(B, 1, self.config.rnn1, W)
        x = self._run_block(x, self.block2, training)
        _, C2, H2, W2 = x.data.shape
        x = self.rnn2(x.transpose(0, 3, 1, 2).reshape(B, W2, C2 * H2))
        scores = self.score_proj(x.reshape(B * W2, self.config.rnn2)).reshape(B, W2, 1)
        return scores

    def pool_scores(self, scores):
        """Sigmoid per step (unless disabled), then mean pool over time."""
        if self.config.use_sigmoid:
            scores = ad.sigmoid(scores)
        return ad.mean_pool(scores, axis=1).reshape(-1)

    def __call__(self, emb, training=True):
        return self.pool_scores(self.per_step_scores(emb, training))


def critic_score(critic, embedding):
    """Score one utterance's embedding; in (0, 1) with the sigmoid head."""
    states = embedding.states if hasattr(embedding, "states") else np.asarray(embedding)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ad.ShapeError("critic_score", states.shape)
    with ad.no_grad():
        t = Tensor(np.asarray(states, dtype=ad.default_dtype())[None])
        return float(critic(t, training=False).data[0])


def em_losses(critic, clean_emb, noisy_emb, training=True):
    """Earth-mover dual estimate from a batch of embeddings.

    Returns (critic_objective, generator_objective):
    critic_objective  = mean f(clean) - mean f(noisy); the critic ascends it.
    generator_objective = -mean f(noisy); the encoder descends it so noisy
    embeddings score as clean.
    """
    if clean_emb.data.shape[0] != noisy_emb.data.shape[0]:
        raise ad.ShapeError("em_losses", clean_emb.data.shape, noisy_emb.data.shape)
    f_clean = critic(clean_emb, training).mean()
    f_noisy = critic(noisy_emb, training).mean()
    critic_objective = f_clean - f_noisy
    generator_objective = -f_noisy
    return critic_objective, generator_objective


def clip_weights(critic, c):
    """Clamp every critic weight into [-c, c] (Lipschitz constraint)."""
    critic.store.clip_values(c)


FULL_CRITIC = CriticConfig()

DESK_CRITIC = CriticConfig(
    block1=((8, (5, 2), (3, 1)), (16, (3, 2), (2, 1))),
    rnn1=16,
    block2=((16, (3, 2), (2, 1)), (24, (3, 2), (1, 1))),
    rnn2=16,
)
