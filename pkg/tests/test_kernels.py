from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from bearing_vit import kernels
from bearing_vit.errors import NotPowerOfTwo

from oracles import naive_dft

BACKENDS = sorted(kernels.available_backends())


def test_compiled_backend_builds():
    # the editable install compiles the extension; the fallback is still importable
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("n", [2**k for k in range(1, 9)])
def test_fft_matches_naive_dft(backend, n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
    got = kernels.fft_batch(x, backend=backend)
    assert np.max(np.abs(got - naive_dft(x))) < 1e-9


@pytest.mark.parametrize("backend", BACKENDS)
def test_fft_does_not_mutate_input(backend):
    x = np.arange(8, dtype=np.complex128)
    before = x.copy()
    kernels.fft_batch(x, backend=backend)
    assert np.array_equal(x, before)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(NotPowerOfTwo):
        kernels.fft_batch(np.zeros(12))


def test_backends_agree_on_impulse_train():
    times = np.array([0.0, 0.0101, 0.02037, 0.031])
    amps = np.array([1.0, 0.5, -0.3, 2.0])
    outs = [
        kernels.impulse_train(600, times, amps, 12000.0, 900.0, 3000.0, 200, backend=b)
        for b in BACKENDS
    ]
    for out in outs[1:]:
        assert np.max(np.abs(out - outs[0])) < 1e-12


def test_impulse_train_against_direct_sum():
    fs, decay, freq = 8000.0, 500.0, 1000.0
    times = np.array([0.001, 0.004])
    amps = np.array([1.0, -2.0])
    n = 120
    t = np.arange(n) / fs
    expected = np.zeros(n)
    for tk, a in zip(times, amps):
        live = t >= tk
        dt = t[live] - tk
        expected[live] += a * np.exp(-decay * dt) * np.sin(2 * np.pi * freq * dt)
    got = kernels.impulse_train(n, times, amps, fs, decay, freq, n)
    assert np.max(np.abs(got - expected)) < 1e-12


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.fft_batch(np.zeros(4), backend="fortran")


def test_env_var_forces_fallback():
    env = dict(os.environ, BEARING_VIT_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import bearing_vit; print(bearing_vit.KERNEL_BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
