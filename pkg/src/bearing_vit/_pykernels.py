"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""

from __future__ import annotations

import math

import numpy as np


def fft_rows(x: np.ndarray, twiddle: np.ndarray, bitrev: np.ndarray) -> None:
    """In-place radix-2 DIT FFT of every row of ``x``; stages are vectorized over rows."""
    rows, n = x.shape
    y = x[:, bitrev]
    m = 2
    while m <= n:
        half = m >> 1
        w = twiddle[:: n // m][:half]
        blocks = y.reshape(rows, n // m, 2, half)
        u = blocks[:, :, 0, :]
        v = blocks[:, :, 1, :] * w
        y = np.concatenate((u + v, u - v), axis=2).reshape(rows, n)
        m <<= 1
    x[...] = y


def impulse_train(
    out: np.ndarray,
    times: np.ndarray,
    amps: np.ndarray,
    fs: float,
    decay: float,
    freq: float,
    window: int,
) -> None:
    n_out = out.shape[0]
    w = 2.0 * math.pi * freq
    for tk, a in zip(times, amps):
        n0 = int(math.ceil(tk * fs))
        n1 = min(n0 + window, n_out)
        if n1 <= n0:
            continue
        dt = np.arange(n0, n1) / fs - tk
        out[n0:n1] += a * np.exp(-decay * dt) * np.sin(w * dt)
