"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one row per (kernel, size, backend) with the best wall time over
``--repeat`` runs and the speedup relative to the pure-Python backend.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from bearing_vit import kernels


def _cases(rng: np.random.Generator):
    # STFT-shaped FFT batches: one 2048-sample segment gives 61 frames of 128
    for rows, n in ((61, 128), (6100, 128), (64, 1024)):
        frames = rng.normal(size=(rows, n)).astype(np.complex128)
        yield f"fft_batch {rows}x{n}", lambda b, f=frames: kernels.fft_batch(f, backend=b)
    # one synthetic class signal: 100 segments of 2048 samples at 12 kHz
    fs, n_samples = 12000.0, 204800
    times = np.cumsum(np.full(int(n_samples / fs * 160), 1 / 160.0))
    amps = rng.uniform(0.5, 1.5, size=times.size)
    window = int(np.ceil(40.0 / 900.0 * fs))
    yield (
        f"impulse_train {times.size} impacts",
        lambda b: kernels.impulse_train(n_samples, times, amps, fs, 900.0, 2600.0, window, backend=b),
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = sorted(kernels.available_backends(), key=lambda b: b != "python")
    print(f"backends: {', '.join(backends)} (default: {kernels.BACKEND})")
    print(f"{'case':<32}{'backend':<10}{'best ms':>10}{'speedup':>10}")
    for name, fn in _cases(np.random.default_rng(0)):
        baseline = None
        for backend in backends:
            fn(backend)  # warm caches and twiddle tables
            best = min(timeit.repeat(lambda: fn(backend), number=1, repeat=args.repeat))
            baseline = baseline or best
            print(f"{name:<32}{backend:<10}{best * 1e3:>10.3f}{baseline / best:>9.2f}x")


if __name__ == "__main__":
    main()
