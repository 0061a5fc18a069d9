"""Training loops for the recognizer, with or without invariance terms.

Modes:
  none  - cross-entropy on the (optionally augmented) noisy stream.
  l1    - adds weight * normalized-L1(embedding(clean), embedding(noisy))
          for the augmented part of each batch.
  wgan  - the adversarial schedule: each outer step runs n_critic inner
          iterations of (recognizer CE update, critic RMSProp ascent with
          weight clipping), then one recognizer update whose gradient adds
          -weight * mean(critic(noisy embedding)) once warmup has passed.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .invariance import EnhancerConfig, clip_weights, em_losses, l1_penalty_batch
from .metrics import score
from .seq2seq import cross_entropy_loss


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; a diagnostic checkpoint is written."""


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    critic_lr: float = 5e-5
    grad_clip: float = 5.0
    eval_every: int = 200
    patience: int = 10
    augment_fraction: float = 0.4
    augment_ce: bool = True      # wgan mode: CE updates see the augmented mix
    seed: int = 0
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)

    def validate(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.augment_fraction <= 1.0:
            raise ValueError(f"augment_fraction must be in [0, 1], got {self.augment_fraction}")
        self.enhancer.validate()
        return self


@dataclass
class StepRecord:
    step: int
    ce: float
    penalty: float = 0.0
    em_estimate: float = 0.0
    critic_objective: float = 0.0
    grad_norm: float = 0.0
    critic_term_grad_norm: float = 0.0
    n_critic_updates: int = 0
    max_abs_critic_weight: float = 0.0
    wall_ms: float = 0.0

    def to_json(self, include_wall_time=True):
        d = {
            "step": self.step,
            "ce": round(self.ce, 6),
            "penalty": round(self.penalty, 6),
            "em_estimate": round(self.em_estimate, 6),
            "critic_objective": round(self.critic_objective, 6),
            "grad_norm": round(self.grad_norm, 6),
            "critic_term_grad_norm": round(self.critic_term_grad_norm, 8),
            "n_critic_updates": self.n_critic_updates,
            "max_abs_critic_weight": round(self.max_abs_critic_weight, 8),
        }
        if include_wall_time:
            d["wall_ms"] = round(self.wall_ms, 3)
        return json.dumps(d, sort_keys=True)


@dataclass
class EvalRecord:
    step: int
    dev_wer: float
    dev_cer: float


@dataclass
class TrainResult:
    steps_run: int
    best_step: int
    best_dev_wer: float
    history: list
    evals: list
    checkpoint_path: str
    critic_weight_trace: list  # max |w| after every critic update


class MetricsWriter:
    def __init__(self, path=None, include_wall_time=True):
        self.path = path
        self.include_wall_time = include_wall_time
        self._fh = open(path, "w") if path else None

    def write(self, record):
        if self._fh:
            self._fh.write(record.to_json(self.include_wall_time) + "\n")

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


class _FakeEntry:
    __slots__ = ("utt_id", "transcript")

    def __init__(self, utt_id, transcript):
        self.utt_id = utt_id
        self.transcript = transcript


def evaluate_wer(model, rows):
    """Greedy-decode [(utt_id, feats, ref)] rows -> (wer, cer)."""
    entries = []
    hyps = {}
    for utt_id, feats, ref in rows:
        hyps[utt_id] = model.greedy_decode(feats).text
        entries.append(_FakeEntry(utt_id, ref))
    report = score(entries, hyps)
    return report.wer, report.cer


class Trainer:
    def __init__(self, model, data, config, critic=None, metrics_writer=None, out_dir=None):
        config.validate()
        self.model = model
        self.data = data
        self.config = config
        self.critic = critic
        self.mode = config.enhancer.mode
        if self.mode == "wgan" and critic is None:
            raise ValueError("wgan mode needs a critic network")
        self.metrics = metrics_writer or MetricsWriter(None)
        self.out_dir = out_dir
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        self.opt = ad.Adam(model.store.parameters(), lr=config.lr)
        self.critic_opt = (
            ad.RMSPropAscent(critic.store.parameters(), lr=config.critic_lr) if critic else None
        )
        self._rng_eps = np.random.default_rng([config.seed, 401])
        self._rng_critic = np.random.default_rng([config.seed, 402])
        self._rng_gen = np.random.default_rng([config.seed, 403])
        self._batches = self._batch_stream()
        self.history = []
        self.evals = []
        self.critic_weight_trace = []

    # -- data -------------------------------------------------------------------

    def _batch_stream(self):
        epoch = 0
        while True:
            for batch in self.data.train_epoch_batches(
                epoch, self.config.batch_size, self.config.augment_fraction,
                seed=self.config.seed,
            ):
                yield batch
            epoch += 1

    # -- shared pieces -------------------------------------------------------------

    def _ce_loss(self, feats, targets):
        enc = self.model.encode_batch(feats, training=True)
        logp = self.model.teacher_forced_log_probs(enc, targets)
        return cross_entropy_loss(logp, targets, self.model.vocab.pad), enc

    def _theta_ce_update(self, batch, use_noisy):
        feats = batch.noisy if use_noisy else batch.clean
        self.model.store.zero_grads()
        ce, _ = self._ce_loss(feats, batch.targets)
        ce.backward()
        self.model.store.clip_grad_norm(self.config.grad_clip)
        self.opt.step()
        return ce.item()

    def _check_finite(self, value, step):
        if not np.isfinite(value):
            snap = os.path.join(self.out_dir or ".", "diverged.ckpt")
            self.save_checkpoint(snap, step)
            raise TrainingDiverged(f"non-finite loss at step {step}; snapshot written to {snap}")

    # -- plain / l1 ------------------------------------------------------------------

    def _step_plain_or_l1(self, step):
        batch = next(self._batches)
        cfg = self.config
        enh = cfg.enhancer
        self.model.store.zero_grads()

        enc_noisy = self.model.encode_batch(batch.noisy, training=True)
        logp = self.model.teacher_forced_log_probs(enc_noisy, batch.targets)
        ce = cross_entropy_loss(logp, batch.targets, self.model.vocab.pad)
        loss = ce
        penalty_val = 0.0
        if self.mode == "l1":
            aug_idx = np.where(batch.aug_mask)[0]
            if len(aug_idx) > 0:
                enc_clean = self.model.encode_batch(
                    batch.clean[aug_idx], training=True, update_stats=False
                )
                pen = l1_penalty_batch(enc_clean, enc_noisy[aug_idx], enh.stability_eps)
                pen_mean = pen.sum() / batch.clean.shape[0]
                loss = ce + enh.weight * pen_mean
                penalty_val = pen_mean.item()

        loss.backward()
        self._check_finite(loss.item(), step)
        gnorm = self.model.store.clip_grad_norm(cfg.grad_clip)
        self.opt.step()
        return StepRecord(step=step, ce=ce.item(), penalty=penalty_val, grad_norm=gnorm)

    # -- wgan ---------------------------------------------------------------------------

    def _critic_update(self):
        cfg = self.config
        enh = cfg.enhancer
        clean_f, noisy_f = self.data.critic_batch(self._rng_critic, cfg.batch_size)
        noisy_f = noisy_f + self._rng_eps.normal(0.0, enh.noise_sigma, size=noisy_f.shape).astype(
            noisy_f.dtype
        )
        with ad.no_grad():
            c_emb = self.model.encode_batch(clean_f, training=True, update_stats=False)
            n_emb = self.model.encode_batch(noisy_f, training=True, update_stats=False)
        self.critic.store.zero_grads()
        c_obj, _ = em_losses(self.critic, c_emb, n_emb, training=True)
        c_obj.backward()
        self.critic_opt.step()
        clip_weights(self.critic, enh.clip)
        self.critic_weight_trace.append(self.critic.store.max_abs_value())
        return c_obj.item()

    def _step_wgan(self, step):
        cfg = self.config
        enh = cfg.enhancer
        critic_obj = 0.0
        ce_inner = 0.0
        n_updates = 0
        for _ in range(enh.n_critic):
            ce_inner = self._theta_ce_update(next(self._batches), use_noisy=cfg.augment_ce)
            critic_obj = self._critic_update()
            n_updates += 1

        batch = next(self._batches)
        self.model.store.zero_grads()
        em_estimate = 0.0
        critic_term_gnorm = 0.0
        if step > enh.warmup_steps:
            gen_clean, gen_noisy = self.data.critic_batch(self._rng_gen, cfg.batch_size)
            gen_noisy = gen_noisy + self._rng_eps.normal(
                0.0, enh.noise_sigma, size=gen_noisy.shape
            ).astype(gen_noisy.dtype)
            n_emb = self.model.encode_batch(gen_noisy, training=True, update_stats=False)
            f_noisy = self.critic(n_emb, training=True).mean()
            gen_term = enh.weight * -f_noisy
            gen_term.backward()
            em_estimate = -f_noisy.item()
            critic_term_gnorm = self.model.store.grad_norm()

        feats = batch.noisy if cfg.augment_ce else batch.clean
        ce, _ = self._ce_loss(feats, batch.targets)
        ce.backward()
        self._check_finite(ce.item(), step)
        gnorm = self.model.store.clip_grad_norm(cfg.grad_clip)
        self.opt.step()
        return StepRecord(
            step=step,
            ce=ce.item(),
            em_estimate=em_estimate,
            critic_objective=critic_obj,
            grad_norm=gnorm,
            critic_term_grad_norm=critic_term_gnorm,
            n_critic_updates=n_updates,
            max_abs_critic_weight=self.critic_weight_trace[-1] if self.critic_weight_trace else 0.0,
        )

    # -- main loop --------------------------------------------------------------------------

    def train(self):
        cfg = self.config
        dev_rows = None
        best = (float("inf"), 0)
        best_state = None
        evals_since_best = 0
        step = 0
        for step in range(1, cfg.steps + 1):
            t0 = time.perf_counter()
            if self.mode == "wgan":
                record = self._step_wgan(step)
            else:
                record = self._step_plain_or_l1(step)
            record.wall_ms = (time.perf_counter() - t0) * 1000.0
            self.history.append(record)
            self.metrics.write(record)

            if cfg.eval_every and step % cfg.eval_every == 0:
                if dev_rows is None:
                    dev_rows = [
                        (f"{u}#near", f, r) for u, f, r in self.data.eval_set("dev", "near")
                    ] + [(f"{u}#far", f, r) for u, f, r in self.data.eval_set("dev", "far")]
                wer, cer = evaluate_wer(self.model, dev_rows)
                self.evals.append(EvalRecord(step, wer, cer))
                if wer < best[0] - 1e-9:
                    best = (wer, step)
                    best_state = self._snapshot_state()
                    evals_since_best = 0
                else:
                    evals_since_best += 1
                    if evals_since_best >= cfg.patience:
                        break

        if best_state is not None:
            self._restore_state(best_state)
        else:
            best = (float("nan"), step)
        ckpt_path = ""
        if self.out_dir:
            ckpt_path = os.path.join(self.out_dir, "model.ckpt")
            self.save_checkpoint(ckpt_path, step)
        self.metrics.close()
        return TrainResult(
            steps_run=step,
            best_step=best[1],
            best_dev_wer=best[0],
            history=self.history,
            evals=self.evals,
            checkpoint_path=ckpt_path,
            critic_weight_trace=self.critic_weight_trace,
        )

    # -- state ------------------------------------------------------------------------------

    def _snapshot_state(self):
        return {k: v.copy() for k, v in self._all_arrays(0).items()}

    def _restore_state(self, snap):
        current = self._all_arrays(0)
        for k, v in snap.items():
            current[k][...] = v

    def _all_arrays(self, step):
        arrays = {}
        for k, v in self.model.store.state_arrays().items():
            arrays[f"model/{k}"] = v
        if self.critic is not None:
            for k, v in self.critic.store.state_arrays().items():
                arrays[f"critic/{k}"] = v
        arrays.update(self.opt.state_arrays("optim/adam"))
        if self.critic_opt is not None:
            arrays.update(self.critic_opt.state_arrays("optim/rms"))
        arrays["trainer/step"] = np.array([float(step)], dtype=np.float32)
        arrays["trainer/seed"] = np.array([float(self.config.seed)], dtype=np.float32)
        return arrays

    def save_checkpoint(self, path, step):
        ad.save_arrays(path, self._all_arrays(step))


def wgan_train(model, critic, data, config, metrics_writer=None, out_dir=None):
    """Adversarial training entry point; config.enhancer.mode must be 'wgan'."""
    if config.enhancer.mode != "wgan":
        raise ValueError(f"wgan_train requires mode='wgan', got {config.enhancer.mode!r}")
    trainer = Trainer(model, data, config, critic=critic, metrics_writer=metrics_writer, out_dir=out_dir)
    return trainer.train()


def load_model_from_checkpoint(model, path, critic=None):
    """Restore model (and optionally critic) tensors from a checkpoint."""
    arrays = ad.load_arrays(path)
    model_arrays = {k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")}
    model.store.load_state_arrays(model_arrays)
    if critic is not None:
        critic_arrays = {k[len("critic/"):]: v for k, v in arrays.items() if k.startswith("critic/")}
        critic.store.load_state_arrays(critic_arrays)
    return model
