"""Feature pipeline feeding training: cached normalized log-mel features,
per-epoch far-field augmentation, and length-bucketed batches.

Batches group utterances with identical frame and target lengths, so no
padding or masking is needed inside a batch (the synthetic corpus makes
lengths a function of transcript length).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .corpus import Manifest
from .farfield import apply_rir
from .frontend import FeatureStats, load_wav, mel_spectrogram, normalize_features
from .seq2seq import pad_targets


@dataclass
class Batch:
    utt_ids: list
    clean: np.ndarray      # (B, T, 40) normalized features
    noisy: np.ndarray      # (B, T, 40); rows equal clean where not augmented
    aug_mask: np.ndarray   # (B,) bool
    targets: np.ndarray    # (B, L) token ids, EOS-terminated, PAD-filled


def compute_feature_stats(manifest):
    """Global per-bin mean/std over a manifest's clean features."""
    seqs = [mel_spectrogram(load_wav(e.audio_path)) for e in manifest]
    return FeatureStats.from_sequences(seqs)


def _utt_stream_seed(base_seed, utt_id):
    return [base_seed, zlib.crc32(utt_id.encode())]


class DataSource:
    """Owns features for one corpus: clean cache, far-field variants, batching."""

    def __init__(self, manifests, rir_banks, stats, vocab, base_seed=0):
        self.manifests = manifests
        self.rir_banks = rir_banks
        self.stats = stats
        self.vocab = vocab
        self.base_seed = base_seed
        self._clean_cache = {}
        self._farfield_cache = {}
        self._wave_cache = {}
        self._entries = {e.utt_id: e for m in manifests.values() for e in m}

    # -- features ---------------------------------------------------------------

    def _waveform(self, utt_id):
        if utt_id not in self._wave_cache:
            self._wave_cache[utt_id] = load_wav(self._entries[utt_id].audio_path)
        return self._wave_cache[utt_id]

    def clean_features(self, utt_id):
        if utt_id not in self._clean_cache:
            feats = normalize_features(mel_spectrogram(self._waveform(utt_id)), self.stats)
            self._clean_cache[utt_id] = feats.frames
        return self._clean_cache[utt_id]

    def farfield_features(self, utt_id, rir):
        key = (utt_id, rir.rir_id)
        if key not in self._farfield_cache:
            wet = apply_rir(self._waveform(utt_id), rir)
            feats = normalize_features(mel_spectrogram(wet), self.stats)
            self._farfield_cache[key] = feats.frames
        return self._farfield_cache[key]

    def fixed_eval_rir(self, utt_id, rir_split, eval_seed=17):
        """Deterministic per-utterance response from a held-out split.

        Independent of the training seed so every trained model is scored
        against the same far-field renditions.
        """
        bank = self.rir_banks[rir_split]
        rng = np.random.default_rng(_utt_stream_seed(eval_seed, utt_id))
        return bank[int(rng.integers(0, len(bank)))]

    def eval_set(self, split, condition):
        """[(utt_id, features, transcript)] for near or far evaluation."""
        out = []
        for e in self.manifests[split]:
            if condition == "near":
                feats = self.clean_features(e.utt_id)
            elif condition == "far":
                rir_split = "eval" if split == "eval" else "dev"
                feats = self.farfield_features(e.utt_id, self.fixed_eval_rir(e.utt_id, rir_split))
            else:
                raise ValueError(f"unknown condition {condition!r}")
            out.append((e.utt_id, feats, e.transcript))
        return out

    # -- training batches ----------------------------------------------------------

    def train_epoch_batches(self, epoch, batch_size, augment_fraction, seed=None):
        """Deterministic batches for one epoch.

        A fresh draw selects round(augment_fraction * N) utterances whose
        noisy stream is a far-field variant under a random train response;
        everything else keeps noisy == clean.
        """
        manifest = self.manifests["train"]
        if seed is None:
            seed = self.base_seed
        rng = np.random.default_rng([seed, 90_001, epoch])
        ids = [e.utt_id for e in manifest]
        order = rng.permutation(len(ids))

        n_aug = int(round(augment_fraction * len(ids)))
        aug_ids = set()
        if n_aug > 0:
            aug_ids = {ids[i] for i in rng.choice(len(ids), size=n_aug, replace=False)}
        train_bank = self.rir_banks.get("train", [])

        buckets = {}
        for pos in order:
            e = manifest.entries[pos]
            clean = self.clean_features(e.utt_id)
            if e.utt_id in aug_ids and train_bank:
                rir = train_bank[int(rng.integers(0, len(train_bank)))]
                noisy = self.farfield_features(e.utt_id, rir)
                augmented = True
            else:
                noisy = clean
                augmented = False
            key = (clean.shape[0], len(e.transcript))
            buckets.setdefault(key, []).append((e.utt_id, clean, noisy, augmented, e.transcript))

        batches = []
        for key in sorted(buckets):
            rows = buckets[key]
            for i in range(0, len(rows), batch_size):
                chunk = rows[i : i + batch_size]
                targets = pad_targets(
                    [self.vocab.target_ids(r[4]) for r in chunk], self.vocab.pad
                )
                batches.append(Batch(
                    utt_ids=[r[0] for r in chunk],
                    clean=np.stack([r[1] for r in chunk]),
                    noisy=np.stack([r[2] for r in chunk]),
                    aug_mask=np.array([r[3] for r in chunk], dtype=bool),
                    targets=targets,
                ))
        batch_order = rng.permutation(len(batches))
        return [batches[i] for i in batch_order]

    def _length_buckets(self):
        if not hasattr(self, "_buckets"):
            buckets = {}
            for e in self.manifests["train"]:
                t = self.clean_features(e.utt_id).shape[0]
                buckets.setdefault(t, []).append(e)
            self._buckets = [buckets[t] for t in sorted(buckets)]
            counts = np.array([len(b) for b in self._buckets], dtype=np.float64)
            self._bucket_p = counts / counts.sum()
        return self._buckets, self._bucket_p

    def critic_batch(self, rng, batch_size):
        """Clean/far-field feature pairs for the adversary: every noisy row
        is a genuine far-field variant of its clean row.  Drawn from a single
        length bucket so the batch stacks without padding."""
        buckets, p = self._length_buckets()
        train_bank = self.rir_banks["train"]
        bucket = buckets[int(rng.choice(len(buckets), p=p))]
        size = min(batch_size, len(bucket))
        picks = rng.choice(len(bucket), size=size, replace=False)
        clean_rows, noisy_rows = [], []
        for i in picks:
            e = bucket[int(i)]
            rir = train_bank[int(rng.integers(0, len(train_bank)))]
            clean_rows.append(self.clean_features(e.utt_id))
            noisy_rows.append(self.farfield_features(e.utt_id, rir))
        return np.stack(clean_rows), np.stack(noisy_rows)
