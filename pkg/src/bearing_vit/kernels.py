"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``BEARING_VIT_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import functools
import os
from types import ModuleType

import numpy as np

from . import _pykernels
from .errors import NotPowerOfTwo


def _load_compiled() -> ModuleType | None:
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()

if _compiled is not None and not os.environ.get("BEARING_VIT_PURE_PYTHON"):
    _impl: ModuleType = _compiled
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"


def available_backends() -> dict[str, ModuleType]:
    backends = {"python": _pykernels}
    if _compiled is not None:
        backends["cython"] = _compiled
    return backends


def _resolve(backend: str | None) -> ModuleType:
    if backend is None:
        return _impl
    try:
        return available_backends()[backend]
    except KeyError:
        raise ValueError(f"kernel backend {backend!r} is not available") from None


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@functools.lru_cache(maxsize=32)
def _fft_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n // 2 if n > 1 else 1)
    twiddle = np.exp(-2j * np.pi * k / n)
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    twiddle.setflags(write=False)
    rev.setflags(write=False)
    return twiddle, rev


def fft_batch(frames: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Radix-2 FFT along the last axis of a 1-D or 2-D array; returns a new array."""
    x = np.array(frames, dtype=np.complex128, order="C", copy=True)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("fft_batch expects a 1-D or 2-D array")
    n = x.shape[1]
    if not is_power_of_two(n):
        raise NotPowerOfTwo(f"FFT length {n} is not a power of two")
    if n > 1:
        twiddle, rev = _fft_tables(n)
        _resolve(backend).fft_rows(x, twiddle, rev)
    return x[0] if squeeze else x


def impulse_train(
    n_samples: int,
    times: np.ndarray,
    amps: np.ndarray,
    fs: float,
    decay: float,
    freq: float,
    window: int,
    backend: str | None = None,
) -> np.ndarray:
    out = np.zeros(n_samples, dtype=np.float64)
    _resolve(backend).impulse_train(
        out,
        np.ascontiguousarray(times, dtype=np.float64),
        np.ascontiguousarray(amps, dtype=np.float64),
        float(fs),
        float(decay),
        float(freq),
        int(window),
    )
    return out
