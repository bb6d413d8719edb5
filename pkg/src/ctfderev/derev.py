"""Inverse filtering of reverberant magnitudes, masking, and phase-borrowing resynthesis.

Grids here use the ``(P, K, L)`` / ``(K, L)`` layout: taps on the leading
axis, then frequency bins, then frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import SpectralFrameSet, Waveform, istft
from .errors import DataError

WIENER_FLOOR = 1e-10


@dataclass(frozen=True)
class InverseFilter:
    """Per-frame real filter, ``values[p, k, l]`` weights ``|Y[k, l - p]|``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] < 1:
            raise DataError(f"inverse filter must be P x K x L with P >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("inverse filter contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def num_taps(self) -> int:
        return self.values.shape[0]

    @classmethod
    def identity(cls, num_taps: int, num_bins: int, num_frames: int) -> "InverseFilter":
        v = np.zeros((num_taps, num_bins, num_frames))
        v[0] = 1.0
        return cls(v)


@dataclass(frozen=True)
class Mask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"mask must be K x L, got {v.shape}")
        if not np.all((v >= 0) & (v <= 1)):
            raise DataError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", v)


def shifted_magnitude_stack(mag: np.ndarray, num_taps: int) -> np.ndarray:
    """Channel ``p`` holds ``mag[:, l - p]``, zero where ``l < p``."""
    if num_taps < 1:
        raise ValueError("num_taps must be >= 1")
    mag = np.asarray(mag)
    num_frames = mag.shape[-1]
    out = np.zeros((num_taps,) + mag.shape, dtype=mag.dtype)
    for p in range(min(num_taps, num_frames)):
        out[p, ..., p:] = mag[..., :num_frames - p]
    return out


def apply_inverse_filter(stack: np.ndarray, w: InverseFilter | np.ndarray) -> np.ndarray:
    """``max(0, sum_p W[p] * stack[p])``; W itself may be negative."""
    wv = w.values if isinstance(w, InverseFilter) else np.asarray(w)
    if wv.shape != stack.shape:
        raise DataError(f"filter shape {wv.shape} does not match stack {stack.shape}")
    return np.maximum(np.einsum("pkl,pkl->kl", wv, stack), 0.0)


def reconstruct(mag: np.ndarray, y: SpectralFrameSet, length: int | None = None) -> Waveform:
    """Resynthesise ``mag`` with the phase of ``y``."""
    if mag.shape != y.coeffs.shape:
        raise DataError(f"magnitude shape {mag.shape} does not match spectrum {y.coeffs.shape}")
    unit = np.exp(1j * np.angle(y.coeffs))
    return istft(SpectralFrameSet(mag * unit, y.config, y.sample_rate), length)


def apply_mask(y: SpectralFrameSet, mask: Mask | np.ndarray) -> SpectralFrameSet:
    m = mask.values if isinstance(mask, Mask) else np.asarray(mask)
    if m.shape != y.coeffs.shape:
        raise DataError(f"mask shape {m.shape} does not match spectrum {y.coeffs.shape}")
    return SpectralFrameSet(m * y.coeffs, y.config, y.sample_rate)


def dsm_head_decode(lps_out: np.ndarray) -> np.ndarray:
    return np.exp(np.asarray(lps_out) / 2.0)


def wiener_mask(early: SpectralFrameSet | np.ndarray, late: SpectralFrameSet | np.ndarray) -> Mask:
    """``|E|^2 / (|E|^2 + |L|^2)`` with the denominator floored; both zero gives 0."""
    e = early.coeffs if isinstance(early, SpectralFrameSet) else np.asarray(early)
    lt = late.coeffs if isinstance(late, SpectralFrameSet) else np.asarray(late)
    if e.shape != lt.shape:
        raise DataError(f"shape mismatch: {e.shape} vs {lt.shape}")
    pe, pl = np.abs(e) ** 2, np.abs(lt) ** 2
    return Mask(np.clip(pe / np.maximum(pe + pl, WIENER_FLOOR), 0.0, 1.0))
