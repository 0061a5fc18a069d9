"""Synthetic speech-like corpus: each character is a fixed 120 ms two-tone
signature, so transcripts map to audio deterministically and reverberation
smears neighbouring characters into each other.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass

import numpy as np

from .frontend import write_wav_pcm16

SAMPLE_RATE = 16000
CHAR_DURATION_S = 0.12
CHAR_SAMPLES = int(CHAR_DURATION_S * SAMPLE_RATE)
TONE_CHARS = "abcdefghijklmnopqrstuvwxyz "
NOISE_STD = 0.006
EDGE_RAMP_S = 0.010


@dataclass
class ManifestEntry:
    utt_id: str
    audio_path: str
    transcript: str


@dataclass
class Manifest:
    entries: list
    split: str = ""

    def __post_init__(self):
        ids = [e.utt_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate utterance ids in manifest")
        for e in self.entries:
            if not e.transcript:
                raise ValueError(f"{e.utt_id}: empty transcript")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def write_manifest(path, manifest):
    """Audio paths are stored relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            rel = os.path.relpath(os.path.abspath(e.audio_path), base)
            fh.write(f"{e.utt_id}\t{rel}\t{e.transcript}\n")


def read_manifest(path, split=""):
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 'id<TAB>path<TAB>transcript'")
            utt_id, rel, transcript = parts
            entries.append(ManifestEntry(utt_id, os.path.normpath(os.path.join(base, rel)), transcript))
    return Manifest(entries, split=split)


def char_tone_pair(ch):
    """Injective character -> (low Hz, high Hz) mapping."""
    i = TONE_CHARS.index(ch)
    n = len(TONE_CHARS) - 1
    low = 350.0 * (2400.0 / 350.0) ** (i / n)
    high = 7300.0 * (2800.0 / 7300.0) ** (i / n)
    return low, high


def char_signature(ch):
    """Clean 120 ms two-tone burst with Hann edge ramps."""
    f1, f2 = char_tone_pair(ch)
    t = np.arange(CHAR_SAMPLES) / SAMPLE_RATE
    sig = 0.42 * np.sin(2 * np.pi * f1 * t) + 0.33 * np.sin(2 * np.pi * f2 * t)
    ramp = int(EDGE_RAMP_S * SAMPLE_RATE)
    env = np.ones(CHAR_SAMPLES)
    half = np.hanning(2 * ramp)
    env[:ramp] = half[:ramp]
    env[-ramp:] = half[ramp:]
    return (sig * env).astype(np.float64)


_SIGNATURES = {ch: char_signature(ch) for ch in TONE_CHARS}


def synthesize_utterance(text, rng):
    """Concatenate character signatures plus mild Gaussian noise."""
    for ch in text:
        if ch not in _SIGNATURES:
            raise ValueError(f"character {ch!r} has no tone signature")
    clean = np.concatenate([_SIGNATURES[ch] for ch in text])
    noisy = clean + rng.normal(0.0, NOISE_STD, size=clean.shape)
    return np.clip(noisy, -1.0, 1.0)


def random_transcript(rng, min_len, max_len):
    """Random a-z/space string: no leading/trailing/double spaces."""
    k = int(rng.integers(min_len, max_len + 1))
    out = []
    for i in range(k):
        can_space = 0 < i < k - 1 and out[-1] != " "
        pool = TONE_CHARS if can_space else TONE_CHARS[:-1]
        out.append(pool[int(rng.integers(0, len(pool)))])
    return "".join(out)


def generate_toy_corpus(out_dir, counts, seed, min_len=3, max_len=10):
    """Create WAVs plus one manifest per split; deterministic for a seed.

    counts: {"train": n, "dev": m, "eval": k}; returns {split: Manifest}.
    """
    if min_len < 1 or max_len < min_len:
        raise ValueError(f"bad length range [{min_len}, {max_len}]")
    manifests = {}
    idx = 0
    for split, count in counts.items():
        if count < 1:
            raise ValueError(f"split {split!r} needs at least one utterance")
        rng = np.random.default_rng([seed, zlib.crc32(split.encode())])
        split_dir = os.path.join(out_dir, split)
        os.makedirs(split_dir, exist_ok=True)
        entries = []
        for _ in range(count):
            utt_id = f"utt{idx:05d}"
            idx += 1
            text = random_transcript(rng, min_len, max_len)
            samples = synthesize_utterance(text, rng)
            path = os.path.join(split_dir, f"{utt_id}.wav")
            write_wav_pcm16(path, samples, SAMPLE_RATE)
            entries.append(ManifestEntry(utt_id, path, text))
        manifest = Manifest(entries, split=split)
        write_manifest(os.path.join(out_dir, f"manifest_{split}.tsv"), manifest)
        manifests[split] = manifest
    return manifests
