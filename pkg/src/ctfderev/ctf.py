"""Convolutive transfer function (CTF) forward model.

A reverberant spectrum is modelled per frequency bin as a causal
convolution along frames, ``Y[k, l] = sum_p conj(H[k, p]) S[k, l - p]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dsp import SpectralFrameSet, StftConfig, Waveform, stft
from .errors import DataError
from .room import RirFilter, convolve_static

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CtfFilter:
    coeffs: np.ndarray
    config: StftConfig

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 2 or c.shape[1] < 1:
            raise DataError(f"CTF must be K x P with P >= 1, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DataError("CTF contains non-finite coefficients")
        object.__setattr__(self, "coeffs", c)

    @property
    def num_taps(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def identity(cls, config: StftConfig = StftConfig(), num_taps: int = 1) -> "CtfFilter":
        coeffs = np.zeros((config.num_bins, num_taps), dtype=np.complex128)
        coeffs[:, 0] = 1.0
        return cls(coeffs, config)


def ctf_num_taps(rir_len: int, config: StftConfig) -> int:
    return math.ceil((rir_len + config.window_len) / config.hop)


def ctf_from_rir(h: RirFilter | np.ndarray, config: StftConfig = StftConfig()) -> CtfFilter:
    """CTF taps from an RIR split into hop-length blocks.

    Tap ``p`` is the ``fft_len``-point DFT of ``h[p*hop:(p+1)*hop]``
    (conjugated).  An impulse at lag ``p0 * hop`` maps to a unit tap at
    ``p0`` and nothing else, so hop-multiple delays are modelled exactly.
    """
    taps = h.taps if isinstance(h, RirFilter) else np.asarray(h, dtype=np.float64)
    num_taps = ctf_num_taps(taps.size, config)
    blocks = np.zeros((num_taps, config.hop))
    flat = blocks.reshape(-1)
    flat[:taps.size] = taps
    spectra = np.fft.rfft(blocks, n=config.fft_len, axis=1).T
    return CtfFilter(np.conj(spectra), config)


def ctf_convolve(spec: SpectralFrameSet, ctf: CtfFilter) -> SpectralFrameSet:
    """Per-bin causal convolution of frames with ``conj(H)``; frames before 0 are zero."""
    S = spec.coeffs
    H = np.conj(ctf.coeffs)
    if H.shape[0] != S.shape[0]:
        raise DataError(f"bin count mismatch: spectrum {S.shape[0]}, CTF {H.shape[0]}")
    num_frames = S.shape[1]
    out = np.zeros_like(S)
    for p in range(min(ctf.num_taps, num_frames)):
        out[:, p:] += H[:, p:p + 1] * S[:, :num_frames - p]
    return SpectralFrameSet(out, spec.config, spec.sample_rate)


def ctf_magnitude_kernel(ctf: CtfFilter) -> np.ndarray:
    return np.abs(ctf.coeffs)


def ctf_approximation_error(s: Waveform, h: RirFilter, config: StftConfig = StftConfig()) -> float:
    """Relative spectrogram error of the CTF model against exact convolution."""
    y, _, _ = convolve_static(s, h)
    exact = stft(y, config).coeffs
    model = ctf_convolve(stft(s, config), ctf_from_rir(h, config)).coeffs
    err = float(np.linalg.norm(model - exact) / np.linalg.norm(exact))
    log.info("CTF approximation error %.4f (Q=%d, window=%d)", err, len(h), config.window_len)
    return err
