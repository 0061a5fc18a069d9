"""Shared test utilities: independent oracles kept free of the code under test."""

from __future__ import annotations

import numpy as np


def fd_grad(f, arrays, h=1e-4):
    """Central finite-difference gradient of scalar f w.r.t. each array.

    f takes the list of float64 arrays and returns a python float.  This is
    the independent oracle for every analytic gradient in the engine; it
    never touches the autodiff graph.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(arrays)
            flat[i] = orig - h
            down = f(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def fd_grad_entries(f, arr, entries, h=1e-4):
    """Central differences for selected flat indices of one array."""
    flat = arr.reshape(-1)
    out = {}
    for i in entries:
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out


def rel_err(a, b):
    """Max elementwise relative error with an absolute floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def brute_force_edit_distance(ref, hyp):
    """Exhaustive edit-distance oracle: breadth-first search over edits.

    Only usable for short sequences; cross-checks the DP implementation.
    """
    from itertools import product

    ref = tuple(ref)
    hyp = tuple(hyp)

    best = {}

    def walk(i, j, cost):
        key = (i, j)
        if key in best and best[key] <= cost:
            return
        best[key] = cost
        if i < len(ref) and j < len(hyp):
            walk(i + 1, j + 1, cost + (ref[i] != hyp[j]))
        if i < len(ref):
            walk(i + 1, j, cost + 1)
        if j < len(hyp):
            walk(i, j + 1, cost + 1)

    walk(0, 0, 0)
    return best[(len(ref), len(hyp))]


def direct_convolution(x, k):
    """O(N*K) schoolbook full convolution, the oracle for apply_rir."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    out = np.zeros(len(x) + len(k) - 1)
    for i, xi in enumerate(x):
        if xi != 0.0:
            out[i : i + len(k)] += xi * k
    return out


def direct_dft_power(frame):
    """Naive DFT power spectrum (one-sided), oracle for the stft path."""
    n = len(frame)
    nfft_half = None
    # match a 512-point FFT: zero-pad to 512
    nfft = 512
    padded = np.zeros(nfft)
    padded[:n] = frame
    freqs = np.arange(nfft // 2 + 1)
    out = np.zeros(nfft // 2 + 1)
    t = np.arange(nfft)
    for idx, k in enumerate(freqs):
        re = np.sum(padded * np.cos(-2 * np.pi * k * t / nfft))
        im = np.sum(padded * np.sin(-2 * np.pi * k * t / nfft))
        out[idx] = re * re + im * im
    return out


def schroeder_decay_db(taps):
    """Schroeder backward-integrated energy decay curve in dB."""
    e = np.asarray(taps, dtype=np.float64) ** 2
    tail = np.cumsum(e[::-1])[::-1]
    tail = np.maximum(tail, 1e-30)
    return 10.0 * np.log10(tail / tail[0])


def rt60_from_taps(taps, sample_rate):
    """RT60 estimate: fit the -5..-25 dB span of the Schroeder curve."""
    curve = schroeder_decay_db(taps)
    idx = np.where((curve <= -5.0) & (curve >= -25.0))[0]
    if len(idx) < 2:
        return float("nan")
    t = idx / sample_rate
    slope = np.polyfit(t, curve[idx], 1)[0]
    if slope >= 0:
        return float("inf")
    return -60.0 / slope
