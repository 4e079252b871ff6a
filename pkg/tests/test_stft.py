from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bearing_vit import stft
from bearing_vit.errors import DegenerateSpectrogram, InvalidParams, NotPowerOfTwo, SignalTooShort

from oracles import naive_dft


class TestFFT:
    def test_zero_frame(self):
        assert not np.any(stft.fft(np.zeros(16), 16))

    def test_on_bin_cosine(self):
        m = np.arange(64)
        spec = stft.fft(np.cos(2 * np.pi * 3 * m / 64), 64)
        mag = np.abs(spec)
        assert abs(mag[3] - 32) < 1e-9
        assert abs(mag[61] - 32) < 1e-9
        others = np.delete(mag, [3, 61])
        assert others.max() < 1e-9
        # the closed form agrees with the brute-force DFT
        assert np.max(np.abs(spec - naive_dft(np.cos(2 * np.pi * 3 * m / 64)))) < 1e-9

    def test_random_frame_vs_oracle(self):
        x = np.random.default_rng(0).normal(size=128)
        assert np.max(np.abs(stft.fft(x, 128) - naive_dft(x))) < 1e-9

    def test_not_power_of_two(self):
        with pytest.raises(NotPowerOfTwo):
            stft.fft(np.zeros(48), 48)

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(1, 8),
        st.floats(-10, 10),
        st.floats(-10, 10),
        st.integers(0, 2**31 - 1),
    )
    def test_linearity(self, log_n, a, b, seed):
        n = 2**log_n
        rng = np.random.default_rng(seed)
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        y = rng.normal(size=n) + 1j * rng.normal(size=n)
        lhs = stft.fft(a * x + b * y, n)
        rhs = a * stft.fft(x, n) + b * stft.fft(y, n)
        assert np.max(np.abs(lhs - rhs)) < 1e-9


class TestSTFT:
    def test_frame_and_bin_counts(self):
        spec = stft.stft(np.random.default_rng(1).normal(size=2048), "Hann", 128, 32, 128, 12000.0)
        assert spec.mags.shape == (61, 65)
        assert spec.bin_freqs[-1] == 6000.0

    def test_zero_signal(self):
        assert not np.any(stft.stft(np.zeros(512)).mags)

    def test_on_bin_tone_rect(self):
        fs, nfft, k = 12000.0, 128, 17
        freq = k * fs / nfft
        x = np.sin(2 * np.pi * freq * np.arange(1024) / fs + 0.3)
        spec = stft.stft(x, "Rect", nfft, 40, nfft, fs)
        assert spec.bin_freqs[k] == freq
        assert np.all(np.argmax(spec.mags, axis=1) == k)
        # first frame against the brute-force DFT
        assert np.max(np.abs(spec.mags[0] - np.abs(naive_dft(x[:nfft]))[: nfft // 2 + 1])) < 1e-9

    def test_parseval_per_frame(self):
        x = np.random.default_rng(2).normal(size=1000)
        frames = stft.windowed_frames(x, "Hann", 100, 25, 128)
        spectra = stft.fft_batch(frames)
        time_energy = np.sum(np.abs(frames) ** 2, axis=1)
        freq_energy = np.sum(np.abs(spectra) ** 2, axis=1) / 128
        assert np.max(np.abs(time_energy - freq_energy) / time_energy) < 1e-10

    def test_hann_is_periodic(self):
        w = stft.window_coefficients("Hann", 8)
        assert w[0] == 0.0
        assert w[4] == 1.0

    @pytest.mark.parametrize(
        "kwargs, exc",
        [
            (dict(window_len=256, nfft=128), InvalidParams),
            (dict(hop=0), InvalidParams),
            (dict(nfft=100, window_len=100), InvalidParams),
        ],
    )
    def test_invalid_params(self, kwargs, exc):
        with pytest.raises(exc):
            stft.stft(np.zeros(1024), **kwargs)

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            stft.stft(np.zeros(100), window_len=128)


class TestImage:
    def _spec(self, mags: np.ndarray) -> stft.Spectrogram:
        f, b = mags.shape
        return stft.Spectrogram(mags, np.arange(f), np.arange(b), 4, 1, 4)

    def test_constant_spectrogram_gives_zeros(self):
        img = stft.to_image(self._spec(np.full((61, 65), 3.0)), 56, 56)
        assert img.pixels.shape == (56, 56, 1)
        assert not np.any(img.pixels)

    def test_identity_resize(self):
        mags = np.random.default_rng(3).uniform(0.1, 5, size=(10, 7))
        img = stft.to_image(self._spec(mags), 7, 10, log_eps=1e-8)
        logm = np.log(mags.T + 1e-8)
        expected = (logm - logm.mean()) / logm.std()
        assert np.max(np.abs(img.pixels[:, :, 0] - expected)) < 1e-12

    def test_default_image_statistics(self):
        x = np.random.default_rng(4).normal(size=2048)
        img = stft.to_image(stft.stft(x, sample_rate=12000.0))
        assert img.pixels.shape == (56, 56, 1)
        assert abs(img.pixels.mean()) < 1e-9
        assert abs(img.pixels.std() - 1) < 1e-6

    def test_degenerate(self):
        with pytest.raises(DegenerateSpectrogram):
            stft.to_image(self._spec(np.ones((1, 65))), 56, 56)

    def test_bilinear_constant_is_constant(self):
        grid = np.full((13, 9), 0.7)
        assert np.all(stft.bilinear_resize(grid, 31, 5) == 0.7)

    def test_bilinear_against_pointwise_formula(self):
        grid = np.random.default_rng(5).normal(size=(6, 5))
        out = stft.bilinear_resize(grid, 9, 4)
        for i in range(9):
            for j in range(4):
                y, x = i * 5 / 8, j * 4 / 3
                y0, x0 = min(int(y), 4), min(int(x), 3)
                fy, fx = y - y0, x - x0
                v = (
                    grid[y0, x0] * (1 - fy) * (1 - fx)
                    + grid[y0, x0 + 1] * (1 - fy) * fx
                    + grid[y0 + 1, x0] * fy * (1 - fx)
                    + grid[y0 + 1, x0 + 1] * fy * fx
                )
                assert abs(out[i, j] - v) < 1e-12

    def test_corners_preserved(self):
        grid = np.random.default_rng(6).normal(size=(8, 8))
        out = stft.bilinear_resize(grid, 20, 3)
        assert out[0, 0] == grid[0, 0] and out[-1, -1] == grid[-1, -1]


class TestPersistence:
    def test_image_round_trip(self, tmp_path: Path):
        img = stft.TFImage(np.random.default_rng(7).normal(size=(4, 6, 2)))
        stft.save_image(tmp_path / "a.tfi", img)
        raw = (tmp_path / "a.tfi").read_bytes()
        assert raw[:12] == (4).to_bytes(4, "little") + (6).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert np.array_equal(stft.load_image(tmp_path / "a.tfi").pixels, img.pixels)

    def test_pgm_header(self, tmp_path: Path):
        img = stft.TFImage(np.arange(12, dtype=float).reshape(3, 4, 1))
        stft.save_pgm(tmp_path / "a.pgm", img)
        data = (tmp_path / "a.pgm").read_bytes()
        assert data.startswith(b"P5\n4 3\n255\n")
        assert len(data) == len(b"P5\n4 3\n255\n") + 12
