"""Room impulse response synthesis and duration-preserving reverberation.

Far-field audio is simulated by convolving clean speech with an impulse
response from a rectangular-room image-source model.  The convolution
left-pads the dry signal so the output keeps the input's length exactly,
which the frame-wise embedding comparison downstream depends on.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .frontend import FeatureSequence, Waveform, read_wav_any, write_wav_float32

SPEED_OF_SOUND = 343.0
DEFAULT_MAX_ORDER = 8
DEFAULT_BANK_SIZES = {"train": 64, "dev": 8, "eval": 12}

# 20 fixed room geometries: (dims_x, dims_y, dims_z, wall reflection coefficient)
_room_rng = np.random.default_rng(271_828)
ROOM_TABLE = [
    (
        float(5.0 + 3.5 * _room_rng.random()),
        float(4.0 + 3.0 * _room_rng.random()),
        float(2.6 + 0.9 * _room_rng.random()),
        float(0.55 + 0.3 * _room_rng.random()),
    )
    for _ in range(20)
]
del _room_rng


@dataclass
class RoomSpec:
    room_dims: np.ndarray        # (3,) meters
    source_pos: np.ndarray       # (3,)
    mic_pos: np.ndarray          # (3,)
    reflection: np.ndarray       # (6,) per-wall coefficient in [0, 1)
    max_order: int
    room_index: int = -1
    inclination_deg: float = float("nan")

    def __post_init__(self):
        self.room_dims = np.asarray(self.room_dims, dtype=np.float64)
        self.source_pos = np.asarray(self.source_pos, dtype=np.float64)
        self.mic_pos = np.asarray(self.mic_pos, dtype=np.float64)
        self.reflection = np.asarray(self.reflection, dtype=np.float64)
        for name, pos in (("source", self.source_pos), ("mic", self.mic_pos)):
            if np.any(pos <= 0.0) or np.any(pos >= self.room_dims):
                raise ValueError(f"{name} position {pos} is not strictly inside room {self.room_dims}")
        if np.any(self.reflection < 0.0) or np.any(self.reflection >= 1.0):
            raise ValueError(f"reflection coefficients must lie in [0, 1), got {self.reflection}")

    @property
    def distance(self):
        return float(np.linalg.norm(self.source_pos - self.mic_pos))


@dataclass
class RoomImpulseResponse:
    taps: np.ndarray
    sample_rate: int
    spec: RoomSpec | None = None
    split: str = ""
    rir_id: str = ""

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float32)
        if len(self.taps) == 0 or not np.all(np.isfinite(self.taps)):
            raise ValueError("impulse response must be non-empty and finite")


def sample_room_spec(rng, max_order=DEFAULT_MAX_ORDER, margin=0.35, n_rooms=None):
    """Draw one of the 20 fixed rooms, a mic, and a source placed uniformly
    at 1..3 m distance and 60..120 degrees inclination from vertical."""
    room_index = int(rng.integers(0, n_rooms if n_rooms else len(ROOM_TABLE)))
    lx, ly, lz, refl = ROOM_TABLE[room_index]
    dims = np.array([lx, ly, lz])
    while True:
        mic = margin + rng.random(3) * (dims - 2 * margin)
        distance = 1.0 + 2.0 * rng.random()
        incl = np.deg2rad(60.0 + 60.0 * rng.random())
        azim = 2.0 * np.pi * rng.random()
        direction = np.array(
            [np.sin(incl) * np.cos(azim), np.sin(incl) * np.sin(azim), np.cos(incl)]
        )
        source = mic + distance * direction
        if np.all(source > margin) and np.all(source < dims - margin):
            return RoomSpec(
                room_dims=dims,
                source_pos=source,
                mic_pos=mic,
                reflection=np.full(6, refl),
                max_order=max_order,
                room_index=room_index,
                inclination_deg=float(np.rad2deg(incl)),
            )


def generate_rir(spec, sample_rate=16000):
    """Image-source impulse response; each image contributes amp/(4*pi*path)
    at the nearest-sample delay path/c."""
    if spec.distance <= 0.0:
        raise ValueError("source and microphone coincide; cannot generate an impulse response")
    n_ax, p_ax, coord_ax, amp_ax, order_ax = [], [], [], [], []
    for axis in range(3):
        L = spec.room_dims[axis]
        s = spec.source_pos[axis]
        b_lo = spec.reflection[2 * axis]
        b_hi = spec.reflection[2 * axis + 1]
        n = np.arange(-spec.max_order, spec.max_order + 1)
        coords, amps, orders = [], [], []
        for p in (0, 1):
            coords.append((1 - 2 * p) * s + 2.0 * n * L)
            refl_lo = np.abs(n - p)
            refl_hi = np.abs(n)
            amps.append((b_lo ** refl_lo) * (b_hi ** refl_hi))
            orders.append(refl_lo + refl_hi)
        coord_ax.append(np.concatenate(coords))
        amp_ax.append(np.concatenate(amps))
        order_ax.append(np.concatenate(orders))

    cx, cy, cz = np.meshgrid(coord_ax[0], coord_ax[1], coord_ax[2], indexing="ij")
    ax, ay, az = np.meshgrid(amp_ax[0], amp_ax[1], amp_ax[2], indexing="ij")
    ox, oy, oz = np.meshgrid(order_ax[0], order_ax[1], order_ax[2], indexing="ij")
    keep = (ox + oy + oz) <= spec.max_order

    dx = cx[keep] - spec.mic_pos[0]
    dy = cy[keep] - spec.mic_pos[1]
    dz = cz[keep] - spec.mic_pos[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    amp = (ax[keep] * ay[keep] * az[keep]) / (4.0 * np.pi * dist)
    delays = np.rint(dist / SPEED_OF_SOUND * sample_rate).astype(np.int64)

    taps = np.zeros(int(delays.max()) + 1, dtype=np.float64)
    np.add.at(taps, delays, amp)
    return RoomImpulseResponse(taps.astype(np.float32), sample_rate, spec=spec)


def apply_rir(clean, rir, normalize=True):
    """Convolve; output length equals input length.

    The dry signal is left-padded with len(taps)-1 zeros before a valid
    convolution, which preserves duration with causal alignment.  The result
    is rescaled to the dry signal's peak unless normalize=False.
    """
    if len(rir.taps) == 0:
        raise ValueError("empty impulse response")
    if clean.sample_rate != rir.sample_rate:
        raise ValueError(f"sample rate mismatch: {clean.sample_rate} vs {rir.sample_rate}")
    k = len(rir.taps)
    padded = np.concatenate([np.zeros(k - 1, dtype=np.float64), clean.samples.astype(np.float64)])
    wet = fftconvolve(padded, rir.taps.astype(np.float64), mode="valid")
    if normalize:
        peak_in = np.max(np.abs(clean.samples))
        peak_out = np.max(np.abs(wet))
        if peak_out > 0.0:
            wet = wet * (peak_in / peak_out)
    return Waveform(wet.astype(np.float32), clean.sample_rate)


def add_noise_prior(features, sigma, rng):
    """Add i.i.d. zero-mean Gaussian noise to every feature cell."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return features
    noisy = features.frames + rng.normal(0.0, sigma, size=features.frames.shape).astype(np.float32)
    return FeatureSequence(noisy, features.frame_shift, features.frame_length)


# -- RIR banks -----------------------------------------------------------------


def build_rir_bank(rng, sizes=None, sample_rate=16000, max_order=DEFAULT_MAX_ORDER, n_rooms=None):
    """Disjoint train/dev/eval collections of synthesized responses."""
    sizes = dict(DEFAULT_BANK_SIZES if sizes is None else sizes)
    entries = []
    counter = 0
    for split, count in sizes.items():
        for _ in range(count):
            spec = sample_room_spec(rng, max_order=max_order, n_rooms=n_rooms)
            rir = generate_rir(spec, sample_rate)
            rir.split = split
            rir.rir_id = f"rir{counter:04d}"
            counter += 1
            entries.append(rir)
    return entries


def write_rir_bank(out_dir, entries):
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for rir in entries:
        write_wav_float32(os.path.join(out_dir, f"{rir.rir_id}.wav"), rir.taps, rir.sample_rate)
        spec = rir.spec
        lines.append(
            f"{rir.rir_id} {rir.split} {spec.room_index} {spec.distance:.4f} {spec.inclination_deg:.2f}"
        )
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_rir_bank(bank_dir):
    """Read a bank directory into {split: [RoomImpulseResponse]}."""
    banks = {}
    with open(os.path.join(bank_dir, "manifest.txt")) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            rir_id, split = parts[0], parts[1]
            samples, rate, _, _ = read_wav_any(os.path.join(bank_dir, f"{rir_id}.wav"))
            banks.setdefault(split, []).append(
                RoomImpulseResponse(samples, rate, split=split, rir_id=rir_id)
            )
    ids = [r.rir_id for split in banks.values() for r in split]
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate impulse response ids across splits")
    return banks
