"""Objective scores against the early-reverberant reference: SI-SDR and ESTOI."""

from __future__ import annotations

import functools
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .dsp import Waveform
from .errors import DataError

SI_SDR_CAP = 60.0

# ESTOI constants (Jensen & Taal): 10 kHz analysis, 256-sample frames, 15
# third-octave bands from 150 Hz, 30-frame (384 ms) segments, 40 dB range.
ESTOI_RATE = 10000
ESTOI_FRAME = 256
ESTOI_NFFT = 512
ESTOI_BANDS = 15
ESTOI_MIN_FREQ = 150.0
ESTOI_SEGMENT = 30
ESTOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def _samples(x) -> tuple[np.ndarray, int | None]:
    if isinstance(x, Waveform):
        return x.samples, x.sample_rate
    return np.asarray(x, dtype=np.float64), None


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, capped at +60; inputs are truncated to the shorter length."""
    e, _ = _samples(est)
    r, _ = _samples(ref)
    n = min(e.size, r.size)
    e, r = e[:n], r[:n]
    rr = float(np.dot(r, r))
    if n == 0 or rr == 0.0:
        raise DataError("SI-SDR is undefined for a silent reference")
    target = (np.dot(e, r) / rr) * r
    num = float(np.dot(target, target))
    den = float(np.sum((target - e) ** 2))
    if den == 0.0:
        return SI_SDR_CAP
    if num == 0.0:
        return -np.inf
    return min(SI_SDR_CAP, 10.0 * np.log10(num / den))


@functools.lru_cache(maxsize=None)
def third_octave_matrix(fs: int = ESTOI_RATE, nfft: int = ESTOI_NFFT,
                        num_bands: int = ESTOI_BANDS, min_freq: float = ESTOI_MIN_FREQ) -> np.ndarray:
    """Band-by-bin 0/1 matrix; band edges snap to the nearest FFT bin."""
    freqs = np.arange(nfft // 2 + 1) * fs / nfft
    k = np.arange(num_bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, freqs.size))
    for b in range(num_bands):
        obm[b, np.argmin(np.abs(freqs - lo[b])):np.argmin(np.abs(freqs - hi[b]))] = 1.0
    return obm


def _hann(n: int) -> np.ndarray:
    # symmetric Hann without its zero end points
    return np.hanning(n + 2)[1:-1]


def _frame(x: np.ndarray, framelen: int, hop: int) -> np.ndarray:
    starts = np.arange(0, x.size - framelen, hop)
    if starts.size == 0:
        return np.zeros((0, framelen))
    return x[starts[:, None] + np.arange(framelen)]


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    num, framelen = frames.shape
    out = np.zeros((num - 1) * hop + framelen if num else 0)
    for i in range(num):
        out[i * hop:i * hop + framelen] += frames[i]
    return out


def remove_silent_frames(ref: np.ndarray, est: np.ndarray, dyn_range: float = ESTOI_DYN_RANGE,
                         framelen: int = ESTOI_FRAME, hop: int = ESTOI_FRAME // 2):
    """Drop frames more than ``dyn_range`` dB below the loudest reference frame."""
    w = _hann(framelen)
    rf = _frame(ref, framelen, hop) * w
    ef = _frame(est, framelen, hop) * w
    if rf.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    energy = 20.0 * np.log10(np.linalg.norm(rf, axis=1) + _EPS)
    keep = energy > energy.max() - dyn_range
    return _overlap_add(rf[keep], hop), _overlap_add(ef[keep], hop)


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    frames = _frame(x, ESTOI_FRAME, ESTOI_FRAME // 2) * _hann(ESTOI_FRAME)
    power = np.abs(np.fft.rfft(frames, n=ESTOI_NFFT, axis=1)) ** 2
    return np.sqrt(third_octave_matrix() @ power.T)


def _normalise(seg: np.ndarray, axis: int) -> np.ndarray:
    seg = seg - seg.mean(axis=axis, keepdims=True)
    norm = np.sqrt(np.sum(seg ** 2, axis=axis, keepdims=True))
    return seg / np.maximum(norm, _EPS)


def estoi(est, ref, sample_rate: int | None = None) -> float:
    """Extended STOI of ``est`` against ``ref``; score in [-1, 1].

    Signals are resampled to 10 kHz, silent reference frames removed, and
    each 30-frame band-envelope segment is row- then column-normalised
    before correlating.
    """
    e, fs_e = _samples(est)
    r, fs_r = _samples(ref)
    fs = sample_rate or fs_r or fs_e
    if fs is None:
        raise DataError("estoi needs a sample rate for plain arrays")
    n = min(e.size, r.size)
    e, r = e[:n], r[:n]
    if fs != ESTOI_RATE:
        g = np.gcd(int(fs), ESTOI_RATE)
        r = resample_poly(r, ESTOI_RATE // g, int(fs) // g)
        e = resample_poly(e, ESTOI_RATE // g, int(fs) // g)
    r, e = remove_silent_frames(r, e)
    rx = _band_envelopes(r)
    ex = _band_envelopes(e)
    num_frames = rx.shape[1]
    if num_frames < ESTOI_SEGMENT:
        raise DataError(
            f"estoi needs at least {ESTOI_SEGMENT} non-silent frames, got {num_frames}; input too short"
        )
    idx = np.arange(num_frames - ESTOI_SEGMENT + 1)[:, None] + np.arange(ESTOI_SEGMENT)
    rs = rx[:, idx].transpose(1, 0, 2)  # (segments, bands, frames)
    es = ex[:, idx].transpose(1, 0, 2)
    rn = _normalise(_normalise(rs, 2), 1)
    en = _normalise(_normalise(es, 2), 1)
    return float(np.sum(rn * en) / (ESTOI_SEGMENT * rs.shape[0]))


@dataclass(frozen=True)
class UtteranceScore:
    utterance: str
    room: str
    rt60: float
    scenario: str
    method: str
    si_sdr: float
    estoi: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricReport:
    """Means per ``(room, rt60, scenario, method)`` cell plus the per-utterance rows."""

    cells: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def value(self, room, rt60, scenario, method, metric) -> float:
        return self.cells[(room, float(rt60), scenario, method)][metric]

    @property
    def methods(self) -> list[str]:
        return sorted({k[3] for k in self.cells})


def aggregate(scores: list[UtteranceScore]) -> MetricReport:
    if not scores:
        raise DataError("cannot aggregate an empty score list")
    groups = defaultdict(list)
    for s in scores:
        groups[(s.room, float(s.rt60), s.scenario, s.method)].append(s)
    cells = {}
    for key, items in sorted(groups.items()):
        cells[key] = {
            "si_sdr": float(np.mean([s.si_sdr for s in items])),
            "estoi": float(np.mean([s.estoi for s in items])),
            "count": len(items),
        }
    return MetricReport(cells, list(scores))
