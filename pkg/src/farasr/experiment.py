"""End-to-end comparison harness: four training recipes, near vs far scoring.

Rows:
  none - recognizer trained on clean audio only
  aug  - 40% of training utterances replaced by far-field variants
  l1   - augmentation plus the normalized-L1 embedding penalty
  wgan - augmentation plus the adversarially trained critic

Each row trains once per seed; near-field and far-field eval sets are scored
with CER/WER and the report carries per-seed values plus medians.  With a
fixed seed list, reruns produce byte-identical metrics and reports (metrics
files omit wall-clock time for that reason).
"""

from __future__ import annotations

import json
import os
import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import generate_toy_corpus
from .dataset import DataSource, compute_feature_stats
from .farfield import build_rir_bank, load_rir_bank, write_rir_bank
from .invariance import Critic, CriticConfig, EnhancerConfig
from .metrics import score
from .seq2seq import ModelConfig, Seq2SeqModel, Vocabulary
from .training import MetricsWriter, TrainConfig, Trainer

ROW_ORDER = ("none", "aug", "l1", "wgan")
ROW_LABELS = {
    "none": "recognizer",
    "aug": "+ far-field augmentation",
    "l1": "+ L1 embedding penalty",
    "wgan": "+ adversarial critic",
}


@dataclass
class ExperimentSpec:
    rows: tuple = ROW_ORDER
    seeds: tuple = (1, 2, 3)
    corpus_seed: int = 7
    n_train: int = 240
    n_dev: int = 24
    n_eval: int = 48
    min_len: int = 3
    max_len: int = 8
    rir_sizes: dict = field(default_factory=lambda: {"train": 48, "dev": 8, "eval": 12})
    model: ModelConfig = field(default_factory=ModelConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    steps: int = 2400
    wgan_steps: int = 800
    wgan_warmup: int = 250
    batch_size: int = 8
    lr: float = 2e-3
    critic_lr: float = 1e-3
    eval_every: int = 150
    patience: int = 10
    augment_fraction: float = 0.4
    weight: float = 1.0
    clip: float = 0.05
    n_critic: int = 5
    noise_sigma: float = 0.001

    def validate(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        unknown = set(self.rows) - set(ROW_ORDER)
        if unknown:
            raise ValueError(f"unknown experiment rows: {sorted(unknown)}")
        if not 0.0 <= self.augment_fraction <= 1.0:
            raise ValueError("augment_fraction must be in [0, 1]")
        return self


def row_train_config(spec, row, seed):
    base = dict(
        batch_size=spec.batch_size,
        lr=spec.lr,
        critic_lr=spec.critic_lr,
        eval_every=spec.eval_every,
        patience=spec.patience,
        seed=seed,
    )
    if row == "none":
        enh = EnhancerConfig(mode="none")
        return TrainConfig(steps=spec.steps, augment_fraction=0.0, enhancer=enh, **base)
    if row == "aug":
        enh = EnhancerConfig(mode="none")
        return TrainConfig(steps=spec.steps, augment_fraction=spec.augment_fraction, enhancer=enh, **base)
    if row == "l1":
        enh = EnhancerConfig(mode="l1", weight=spec.weight)
        return TrainConfig(steps=spec.steps, augment_fraction=spec.augment_fraction, enhancer=enh, **base)
    if row == "wgan":
        enh = EnhancerConfig(
            mode="wgan", weight=spec.weight, clip=spec.clip,
            n_critic=spec.n_critic, warmup_steps=spec.wgan_warmup,
            noise_sigma=spec.noise_sigma,
        )
        return TrainConfig(steps=spec.wgan_steps, augment_fraction=spec.augment_fraction, enhancer=enh, **base)
    raise ValueError(f"unknown row {row!r}")


def prepare_workspace(spec, out_dir):
    """Corpus, impulse response banks, stats, and the shared data source."""
    corpus_dir = os.path.join(out_dir, "corpus")
    manifests = generate_toy_corpus(
        corpus_dir,
        {"train": spec.n_train, "dev": spec.n_dev, "eval": spec.n_eval},
        seed=spec.corpus_seed,
        min_len=spec.min_len,
        max_len=spec.max_len,
    )
    bank_dir = os.path.join(out_dir, "rirs")
    entries = build_rir_bank(np.random.default_rng([spec.corpus_seed, 33]), sizes=spec.rir_sizes)
    write_rir_bank(bank_dir, entries)
    banks = load_rir_bank(bank_dir)
    # leak guard: held-out responses never overlap the train bank
    train_ids = {r.rir_id for r in banks["train"]}
    for split in ("dev", "eval"):
        if train_ids & {r.rir_id for r in banks.get(split, [])}:
            raise RuntimeError(f"impulse response leak between train and {split}")
    stats = compute_feature_stats(manifests["train"])
    stats.save(os.path.join(out_dir, "feature_stats.txt"))
    vocab = Vocabulary(spec.model.chars)
    data = DataSource(manifests, banks, stats, vocab, base_seed=spec.corpus_seed)
    return data, manifests


def decode_rows(model, rows):
    return {utt_id: model.greedy_decode(feats).text for utt_id, feats, _ in rows}


def write_hypotheses(path, hyps):
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id in sorted(hyps):
            fh.write(f"{utt_id}\t{hyps[utt_id]}\n")


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    cells: dict  # (row, condition) -> [(seed, wer, cer), ...]

    def median(self, row, condition, metric="wer"):
        idx = 1 if metric == "wer" else 2
        return statistics.median(v[idx] for v in self.cells[(row, condition)])

    def to_jsonl(self):
        lines = []
        for (row, condition), values in sorted(self.cells.items()):
            for seed, wer, cer in values:
                lines.append(json.dumps({
                    "row": row, "condition": condition, "seed": seed,
                    "wer": round(wer, 6), "cer": round(cer, 6),
                }, sort_keys=True))
        for (row, condition) in sorted(self.cells):
            lines.append(json.dumps({
                "row": row, "condition": condition, "median": True,
                "wer": round(self.median(row, condition, "wer"), 6),
                "cer": round(self.median(row, condition, "cer"), 6),
            }, sort_keys=True))
        return "\n".join(lines) + "\n"

    def render_table(self):
        rows_present = [r for r in ROW_ORDER if (r, "near") in self.cells]
        label_w = max(len(ROW_LABELS[r]) for r in rows_present) + 2
        head1 = f"{'model':<{label_w}}  {'Near-Field':^16}  {'Far-Field':^16}"
        head2 = f"{'':<{label_w}}  {'CER':>7} {'WER':>8}  {'CER':>7} {'WER':>8}"
        lines = [head1, head2, "-" * len(head2)]
        for row in rows_present:
            cells = []
            for cond in ("near", "far"):
                cer = self.median(row, cond, "cer") * 100
                wer = self.median(row, cond, "wer") * 100
                cells.append(f"{cer:>6.2f}% {wer:>7.2f}%")
            lines.append(f"{ROW_LABELS[row]:<{label_w}}  {cells[0]}  {cells[1]}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        with open(os.path.join(out_dir, "report.jsonl"), "w") as fh:
            fh.write(self.to_jsonl())
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(self.render_table())


def run_experiment(spec, out_dir):
    """Train every (row, seed) pair and score near/far eval sets."""
    spec.validate()
    os.makedirs(out_dir, exist_ok=True)
    data, manifests = prepare_workspace(spec, out_dir)
    eval_near = data.eval_set("eval", "near")
    eval_far = data.eval_set("eval", "far")
    eval_entries = list(manifests["eval"])

    cells = {}
    incomplete = []
    for row in spec.rows:
        for seed in spec.seeds:
            run_dir = os.path.join(out_dir, "runs", f"{row}-s{seed}")
            os.makedirs(run_dir, exist_ok=True)
            model = Seq2SeqModel(spec.model, np.random.default_rng([seed, 555]))
            critic = None
            cfg = row_train_config(spec, row, seed)
            if cfg.enhancer.mode == "wgan":
                critic = Critic(spec.critic, spec.model.encoder_dim, np.random.default_rng([seed, 556]))
            writer = MetricsWriter(os.path.join(run_dir, "metrics.jsonl"), include_wall_time=False)
            trainer = Trainer(model, data, cfg, critic=critic, metrics_writer=writer, out_dir=run_dir)
            try:
                trainer.train()
            except Exception as exc:  # partial report flagged, run continues
                incomplete.append({"row": row, "seed": seed, "error": str(exc)})
                continue
            for condition, rows_ in (("near", eval_near), ("far", eval_far)):
                hyps = decode_rows(model, rows_)
                write_hypotheses(os.path.join(run_dir, f"hyp_{condition}.txt"), hyps)
                report = score(eval_entries, hyps)
                with open(os.path.join(run_dir, f"score_{condition}.jsonl"), "w") as fh:
                    fh.write(report.to_jsonl())
                cells.setdefault((row, condition), []).append((seed, report.wer, report.cer))

    report = ExperimentReport(spec=spec, cells=cells)
    report.write(out_dir)
    if incomplete:
        with open(os.path.join(out_dir, "incomplete.json"), "w") as fh:
            json.dump(incomplete, fh, indent=2, sort_keys=True)
    return report
