"""Waveform loading and 40-bin log-mel feature extraction.

Features are mel spectrograms of 20 ms windows with 10 ms stride, 40
triangular filters from 0 to Nyquist, natural log with a 1e-10 floor.
All functions are pure; identical input bytes give identical frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

N_MEL_BINS = 40
FRAME_LENGTH_S = 0.020
FRAME_SHIFT_S = 0.010
N_FFT = 512
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-5


class WavError(ValueError):
    """Base for WAV ingestion failures."""


class BadWavHeader(WavError):
    pass


class UnsupportedWavEncoding(WavError):
    pass


class MultiChannelWav(WavError):
    pass


class TooShortError(ValueError):
    """Input shorter than one analysis window; zero-pad at the caller."""


@dataclass
class Waveform:
    samples: np.ndarray  # float in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureSequence:
    frames: np.ndarray  # (T, 40) log-mel energies
    frame_shift: float = FRAME_SHIFT_S
    frame_length: float = FRAME_LENGTH_S

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MEL_BINS:
            raise ValueError(f"expected (T, {N_MEL_BINS}) frames, got {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]


def _read_riff_chunks(blob, path):
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise BadWavHeader(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack("<I", blob[pos + 4 : pos + 8])
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or len(fmt) < 16:
        raise BadWavHeader(f"{path}: missing or truncated fmt chunk")
    if data is None:
        raise BadWavHeader(f"{path}: missing data chunk")
    code, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    return code, channels, rate, bits, data


def read_wav_any(path):
    """Read PCM16 or IEEE-float32 WAV into float samples (any channel count)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    code, channels, rate, bits, data = _read_riff_chunks(blob, path)
    if code == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    elif code == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
    else:
        raise UnsupportedWavEncoding(f"{path}: format code {code} with {bits} bits not supported")
    if channels > 1:
        samples = samples.reshape(-1, channels)
    return samples, rate, channels, code


def load_wav(path):
    """Load a 16-bit PCM mono WAV, samples scaled to [-1, 1] by 1/32768."""
    samples, rate, channels, code = read_wav_any(path)
    if code != 1:
        raise UnsupportedWavEncoding(f"{path}: expected 16-bit PCM, got format code {code}")
    if channels != 1:
        raise MultiChannelWav(f"{path}: expected mono, got {channels} channels")
    return Waveform(samples, rate)


def write_wav_pcm16(path, samples, sample_rate):
    pcm = np.clip(np.asarray(samples, dtype=np.float64) * 32767.0, -32768, 32767)
    body = pcm.astype("<i2").tobytes()
    _write_riff(path, body, sample_rate, code=1, bits=16)


def write_wav_float32(path, samples, sample_rate):
    body = np.asarray(samples, dtype="<f4").tobytes()
    _write_riff(path, body, sample_rate, code=3, bits=32)


def _write_riff(path, body, rate, code, bits):
    block = bits // 8
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(body), b"WAVE",
        b"fmt ", 16, code, 1, rate, rate * block, block, bits,
        b"data", len(body),
    )
    with open(path, "wb") as fh:
        fh.write(hdr + body)


def frame_count(n_samples, window, hop):
    if n_samples < window:
        raise TooShortError(
            f"input of {n_samples} samples is shorter than one {window}-sample window; zero-pad before calling"
        )
    return (n_samples - window) // hop + 1


def stft(waveform, window_s=FRAME_LENGTH_S, hop_s=FRAME_SHIFT_S, n_fft=N_FFT):
    """Hann-windowed complex spectrogram, (T, n_fft//2+1)."""
    w = int(round(window_s * waveform.sample_rate))
    h = int(round(hop_s * waveform.sample_rate))
    n = len(waveform.samples)
    t = frame_count(n, w, h)
    window = np.hanning(w).astype(np.float32)
    idx = np.arange(w)[None, :] + h * np.arange(t)[:, None]
    frames = waveform.samples[idx] * window
    return np.fft.rfft(frames, n=n_fft, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate, n_fft=N_FFT, n_bins=N_MEL_BINS):
    """(n_bins, n_fft//2+1) triangular filters spanning 0..Nyquist."""
    nyquist = sample_rate / 2.0
    pts = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_bins + 2))
    fft_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_bins, len(fft_freqs)))
    for b in range(n_bins):
        lo, mid, hi = pts[b], pts[b + 1], pts[b + 2]
        rising = (fft_freqs - lo) / (mid - lo)
        falling = (hi - fft_freqs) / (hi - mid)
        fb[b] = np.maximum(0.0, np.minimum(rising, falling))
    return fb.astype(np.float32)


def band_center_hz(band, sample_rate, n_bins=N_MEL_BINS):
    pts = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_bins + 2))
    return float(pts[band + 1])


def mel_spectrogram(waveform):
    """Log-mel FeatureSequence, natural log floored at 1e-10."""
    spec = stft(waveform)
    power = (spec.real ** 2 + spec.imag ** 2).astype(np.float32)
    fb = mel_filterbank(waveform.sample_rate)
    mel = power @ fb.T
    return FeatureSequence(np.log(np.maximum(mel, LOG_FLOOR)))


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float32)
        self.std = np.asarray(self.std, dtype=np.float32)
        if self.mean.shape != (N_MEL_BINS,) or self.std.shape != (N_MEL_BINS,):
            raise ValueError(
                f"stats must have {N_MEL_BINS} bins, got {self.mean.shape} / {self.std.shape}"
            )

    @classmethod
    def from_sequences(cls, sequences):
        stacked = np.concatenate([fs.frames for fs in sequences], axis=0).astype(np.float64)
        return cls(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), STD_FLOOR))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(" ".join(repr(float(v)) for v in self.mean) + "\n")
            fh.write(" ".join(repr(float(v)) for v in self.std) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            mean = np.array([float(v) for v in fh.readline().split()], dtype=np.float32)
            std = np.array([float(v) for v in fh.readline().split()], dtype=np.float32)
        return cls(mean, std)


def normalize_features(fs, stats):
    std = np.maximum(stats.std, STD_FLOOR)
    return FeatureSequence((fs.frames - stats.mean) / std, fs.frame_shift, fs.frame_length)


def denormalize_features(fs, stats):
    std = np.maximum(stats.std, STD_FLOOR)
    return FeatureSequence(fs.frames * std + stats.mean, fs.frame_shift, fs.frame_length)


def write_feature_cache(path, fs):
    """Text header "T 40", then the frames as little-endian float32."""
    with open(path, "wb") as fh:
        fh.write(f"{fs.frames.shape[0]} {fs.frames.shape[1]}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(fs.frames, dtype="<f4").tobytes())


def read_feature_cache(path):
    with open(path, "rb") as fh:
        header = fh.readline().split()
        t, bins = int(header[0]), int(header[1])
        frames = np.frombuffer(fh.read(), dtype="<f4", count=t * bins).reshape(t, bins)
    return FeatureSequence(frames.copy())
