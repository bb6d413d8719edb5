"""STFT analysis/synthesis, log-power features and multi-frame stacking.

Spectra are one-sided and stored bins-first, i.e. ``coeffs[k, l]`` with
``K = fft_len // 2 + 1`` rows.  Frame ``l`` covers samples
``[l * hop, l * hop + window_len)`` of the (zero-padded) signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, DataError

DEFAULT_SAMPLE_RATE = 16000
LPS_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise DataError("waveform must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(x)):
            raise DataError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise DataError(f"invalid sample rate {self.sample_rate}")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 400
    hop: int = 160
    fft_len: int = 512
    window_kind: str = "hamming"

    def __post_init__(self):
        if self.window_kind != "hamming":
            raise ConfigError(f"unsupported window kind {self.window_kind!r}")
        if self.window_len < 2:
            raise ConfigError("window_len must be >= 2")
        if not 0 < self.hop <= self.window_len <= self.fft_len:
            raise ConfigError(
                "need 0 < hop <= window_len <= fft_len, got "
                f"hop={self.hop}, window_len={self.window_len}, fft_len={self.fft_len}"
            )

    @property
    def num_bins(self) -> int:
        return self.fft_len // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return math.ceil(num_samples / self.hop)


@dataclass(frozen=True)
class SpectralFrameSet:
    coeffs: np.ndarray
    config: StftConfig
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 2 or c.shape[0] != self.config.num_bins:
            raise DataError(
                f"expected {self.config.num_bins} x L coefficients, got {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @property
    def num_frames(self) -> int:
        return self.coeffs.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.coeffs)


def make_window(config: StftConfig) -> np.ndarray:
    """Periodic Hamming window of ``config.window_len`` samples."""
    n = np.arange(config.window_len)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / config.window_len)


def squared_window_sum(config: StftConfig, num_frames: int) -> np.ndarray:
    """Sum of squared windows shifted by multiples of the hop."""
    w2 = make_window(config) ** 2
    total = np.zeros((num_frames - 1) * config.hop + config.window_len)
    for l in range(num_frames):
        total[l * config.hop:l * config.hop + config.window_len] += w2
    return total


def _frames(x: np.ndarray, config: StftConfig) -> np.ndarray:
    num_frames = config.num_frames(x.size)
    padded = np.zeros((num_frames - 1) * config.hop + config.window_len)
    padded[:x.size] = x
    view = np.lib.stride_tricks.sliding_window_view(padded, config.window_len)
    return view[::config.hop][:num_frames]


def stft(x: Waveform | np.ndarray, config: StftConfig = StftConfig()) -> SpectralFrameSet:
    if isinstance(x, Waveform):
        samples, rate = x.samples, x.sample_rate
    else:
        samples, rate = np.asarray(x, dtype=np.float64), DEFAULT_SAMPLE_RATE
    if samples.size == 0:
        raise DataError("cannot analyse an empty signal")
    frames = _frames(samples, config) * make_window(config)
    coeffs = np.fft.rfft(frames, n=config.fft_len, axis=1).T
    return SpectralFrameSet(coeffs, config, rate)


def istft(spec: SpectralFrameSet, length: int | None = None) -> Waveform:
    """Weighted overlap-add synthesis; exact inverse of :func:`stft`.

    Every frame is windowed again and the sum is divided by the shifted
    squared-window total, so ``istft(stft(x))`` returns ``x``.
    """
    config = spec.config
    num_frames = spec.num_frames
    w = make_window(config)
    frames = np.fft.irfft(spec.coeffs.T, n=config.fft_len, axis=1)[:, :config.window_len]
    out = np.zeros((num_frames - 1) * config.hop + config.window_len)
    for l in range(num_frames):
        out[l * config.hop:l * config.hop + config.window_len] += w * frames[l]
    denom = squared_window_sum(config, num_frames)
    if np.any(denom <= 0.0):
        raise ConfigError("window/hop combination cannot be inverted")
    out /= denom
    if length is not None:
        if length > out.size:
            out = np.pad(out, (0, length - out.size))
        out = out[:length]
    return Waveform(out, spec.sample_rate)


def lps(spec: SpectralFrameSet | np.ndarray) -> np.ndarray:
    """Log power spectrum ``ln(max(|Y|^2, 1e-10))``, shape K x L."""
    coeffs = spec.coeffs if isinstance(spec, SpectralFrameSet) else np.asarray(spec)
    return np.log(np.maximum(np.abs(coeffs) ** 2, LPS_FLOOR))


def stack_multiframe(features: np.ndarray, l: int, context: int) -> np.ndarray:
    """Columns ``v_{l-h} .. v_{l+h}`` with ``h = (context - 1) / 2``.

    Frames outside ``[0, L - 1]`` are zero vectors.
    """
    if context < 1 or context % 2 == 0:
        raise ConfigError(f"frame context must be a positive odd number, got {context}")
    num_bins, num_frames = features.shape
    half = (context - 1) // 2
    out = np.zeros((num_bins, context), dtype=features.dtype)
    for j, src in enumerate(range(l - half, l + half + 1)):
        if 0 <= src < num_frames:
            out[:, j] = features[:, src]
    return out


def read_wav(path: str | Path, expected_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM or 32-bit float WAV file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if rate != expected_rate:
        raise DataError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz "
            "(resample the corpus beforehand)"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, rate)


def write_wav(path: str | Path, x: Waveform, pcm16: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if pcm16:
        data = np.clip(np.round(x.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.samples.astype(np.float32)
    wavfile.write(path, x.sample_rate, data)
