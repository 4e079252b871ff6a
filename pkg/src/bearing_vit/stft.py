"""Short-time Fourier transform and time-frequency image conversion."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateSpectrogram, InvalidParams, MalformedFile, SignalTooShort, UnreadableFile
from .kernels import fft_batch, is_power_of_two


class Window(str, enum.Enum):
    HANN = "Hann"
    RECT = "Rect"


def window_coefficients(kind: Window | str, length: int) -> np.ndarray:
    """Periodic Hann, ``0.5 - 0.5 cos(2 pi m / length)``, or all ones."""
    kind = Window(kind)
    if kind is Window.RECT:
        return np.ones(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    mags: np.ndarray  # [frames, bins]
    frame_times: np.ndarray
    bin_freqs: np.ndarray
    window_len: int
    hop: int
    nfft: int

    @property
    def shape(self) -> tuple[int, int]:
        frames, bins = self.mags.shape
        return frames, bins


@dataclass(frozen=True, eq=False)
class TFImage:
    """Image with rows = frequency bins (ascending) and columns = time frames."""

    pixels: np.ndarray  # [H, W, C]

    @property
    def H(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def W(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def C(self) -> int:
        return int(self.pixels.shape[2])


def fft(frame: np.ndarray, n: int | None = None) -> np.ndarray:
    """Radix-2 FFT, ``X[k] = sum_m x[m] exp(-2 pi i k m / n)``."""
    frame = np.asarray(frame)
    if n is not None and frame.shape[-1] != n:
        raise InvalidParams(f"frame length {frame.shape[-1]} != n={n}")
    return fft_batch(frame)


def frame_signal(samples: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    n_frames = (samples.shape[0] - window_len) // hop + 1
    idx = np.arange(window_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def windowed_frames(
    samples: np.ndarray, window: Window | str, window_len: int, hop: int, nfft: int
) -> np.ndarray:
    """Windowed, zero-padded frames ``[frames, nfft]`` ready for the FFT."""
    samples = np.asarray(samples, dtype=np.float64)
    if window_len < 1 or hop < 1 or window_len > nfft:
        raise InvalidParams(f"need 1 <= window_len <= nfft and hop >= 1 (got {window_len}, {hop}, {nfft})")
    if not is_power_of_two(nfft):
        raise InvalidParams(f"nfft={nfft} is not a power of two")
    if samples.ndim != 1 or samples.shape[0] < window_len:
        raise SignalTooShort(f"{samples.shape[0]} samples < window_len={window_len}")
    frames = frame_signal(samples, window_len, hop) * window_coefficients(window, window_len)
    padded = np.zeros((frames.shape[0], nfft))
    padded[:, :window_len] = frames
    return padded


def stft(
    samples: np.ndarray,
    window: Window | str = Window.HANN,
    window_len: int = 128,
    hop: int = 32,
    nfft: int = 128,
    sample_rate: float = 1.0,
) -> Spectrogram:
    padded = windowed_frames(samples, window, window_len, hop, nfft)
    spectrum = fft_batch(padded)
    mags = np.abs(spectrum[:, : nfft // 2 + 1])
    starts = hop * np.arange(padded.shape[0])
    return Spectrogram(
        mags=mags,
        frame_times=(starts + window_len / 2) / sample_rate,
        bin_freqs=np.arange(nfft // 2 + 1) * sample_rate / nfft,
        window_len=window_len,
        hop=hop,
        nfft=nfft,
    )


def _lerp_axis(grid: np.ndarray, size: int, axis: int) -> np.ndarray:
    src = grid.shape[axis]
    if src == size:
        return grid
    pos = np.arange(size) * (src - 1) / (size - 1)
    lo = np.minimum(np.floor(pos).astype(np.intp), src - 2)
    frac = pos - lo
    a = np.take(grid, lo, axis=axis)
    b = np.take(grid, lo + 1, axis=axis)
    shape = [1] * grid.ndim
    shape[axis] = size
    return a + frac.reshape(shape) * (b - a)


def bilinear_resize(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Corner-aligned bilinear resize.

    Output row ``i`` samples source row ``y = i (h_src - 1) / (height - 1)``;
    rows are interpolated first as ``a + f (b - a)``, then columns.
    """
    return _lerp_axis(_lerp_axis(np.asarray(grid, dtype=np.float64), height, 0), width, 1)


def standardize(grid: np.ndarray) -> np.ndarray:
    if grid.size == 0 or grid.max() == grid.min():
        return np.zeros_like(grid)
    centered = grid - grid.mean()
    return centered / centered.std()


def to_image(spec: Spectrogram, H: int = 56, W: int = 56, log_eps: float = 1e-8) -> TFImage:
    if H < 2 or W < 2:
        raise InvalidParams("image height and width must be >= 2")
    frames, bins = spec.mags.shape
    if frames < 2 or bins < 2:
        raise DegenerateSpectrogram(f"spectrogram {frames}x{bins} has fewer than 2 frames or bins")
    logmag = np.log(spec.mags.T + log_eps)
    pixels = standardize(bilinear_resize(logmag, H, W))
    return TFImage(pixels[:, :, None])


def segment_to_image(
    samples: np.ndarray,
    *,
    window: Window | str = Window.HANN,
    window_len: int = 128,
    hop: int = 32,
    nfft: int = 128,
    height: int = 56,
    width: int = 56,
    log_eps: float = 1e-8,
    sample_rate: float = 1.0,
) -> TFImage:
    spec = stft(samples, window, window_len, hop, nfft, sample_rate)
    return to_image(spec, height, width, log_eps)


# ---------------------------------------------------------------------------
# Persistence

_IMAGE_HEADER = struct.Struct("<III")


def image_to_bytes(image: TFImage) -> bytes:
    h, w, c = image.pixels.shape
    return _IMAGE_HEADER.pack(h, w, c) + np.ascontiguousarray(image.pixels, dtype="<f8").tobytes()


def image_from_bytes(buf: bytes) -> TFImage:
    if len(buf) < _IMAGE_HEADER.size:
        raise MalformedFile("image file shorter than its header")
    h, w, c = _IMAGE_HEADER.unpack_from(buf)
    payload = buf[_IMAGE_HEADER.size :]
    if len(payload) != 8 * h * w * c:
        raise MalformedFile(f"image payload has {len(payload)} bytes, expected {8 * h * w * c}")
    pixels = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(h, w, c)
    return TFImage(pixels)


def save_image(path: str | Path, image: TFImage) -> None:
    Path(path).write_bytes(image_to_bytes(image))


def load_image(path: str | Path) -> TFImage:
    try:
        return image_from_bytes(Path(path).read_bytes())
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc.strerror or exc}") from exc


def to_pgm(grid: np.ndarray, maxval: int = 255) -> bytes:
    """Binary PGM (P5) with values min-max scaled to 0..maxval; row 0 is the top."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = float(g.min()), float(g.max())
    scaled = np.zeros_like(g) if hi == lo else (g - lo) / (hi - lo)
    pix = np.rint(scaled * maxval).astype(np.uint8)
    return f"P5\n{g.shape[1]} {g.shape[0]}\n{maxval}\n".encode("ascii") + pix.tobytes()


def save_pgm(path: str | Path, image: TFImage) -> None:
    # flip so high frequencies sit at the top, as in a conventional spectrogram plot
    Path(path).write_bytes(to_pgm(image.pixels[::-1, :, 0]))
