"""Image-source room impulse responses and reverberant signal synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .dsp import DEFAULT_SAMPLE_RATE, Waveform
from .errors import ConfigError, DataError

SPEED_OF_SOUND = 343.0
SABINE_CONSTANT = 0.1611
KERNEL_TAPS = 81


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple[float, float, float]
    rt60: float
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]
    max_order: int | str = "auto"
    seed: int = 0

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dimensions)
        src = tuple(float(v) for v in self.source_pos)
        mic = tuple(float(v) for v in self.mic_pos)
        if len(dims) != 3 or len(src) != 3 or len(mic) != 3:
            raise ConfigError("room dimensions and positions must be 3-D")
        if min(dims) <= 0:
            raise ConfigError(f"room dimensions must be positive, got {dims}")
        if not self.rt60 > 0:
            raise ConfigError(f"rt60 must be positive, got {self.rt60}")
        for name, pos in (("source", src), ("microphone", mic)):
            if any(not 0.0 < p < d for p, d in zip(pos, dims)):
                raise ConfigError(f"{name} position {pos} is not strictly inside {dims}")
        if self.max_order != "auto" and (not isinstance(self.max_order, int) or self.max_order < 0):
            raise ConfigError(f"max_order must be 'auto' or a non-negative int, got {self.max_order!r}")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "source_pos", src)
        object.__setattr__(self, "mic_pos", mic)

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dimensions
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source_pos, self.mic_pos)))

    def swapped(self) -> "RoomSpec":
        return RoomSpec(self.dimensions, self.rt60, self.mic_pos, self.source_pos,
                        self.max_order, self.seed)


@dataclass(frozen=True)
class RirFilter:
    """Impulse response taps with an absolute early/late split index.

    ``onset`` is the direct-path arrival sample; ``early_len - onset`` is the
    early-reverberation length counted from the direct path.
    """

    taps: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    early_len: int | None = None
    onset: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        h = np.asarray(self.taps, dtype=np.float64)
        if h.ndim != 1 or h.size == 0:
            raise DataError("RIR must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(h)):
            raise DataError("RIR contains non-finite taps")
        early = h.size if self.early_len is None else int(self.early_len)
        if not 0 < early <= h.size:
            raise DataError(f"early_len must lie in (0, {h.size}], got {early}")
        if not 0 <= self.onset < h.size:
            raise DataError(f"onset {self.onset} outside the RIR")
        object.__setattr__(self, "taps", h)
        object.__setattr__(self, "early_len", early)

    def __len__(self):
        return self.taps.size

    @property
    def relative_early_len(self) -> int:
        return self.early_len - self.onset

    def with_early_len(self, q_e: int) -> "RirFilter":
        """Copy whose early part spans ``q_e`` samples after the direct path."""
        return RirFilter(self.taps, self.sample_rate, min(self.onset + q_e, self.taps.size),
                         self.onset, self.meta)


@dataclass(frozen=True)
class SceneScript:
    rirs: tuple[RirFilter, ...]
    switch_period: float = 1.0

    def __post_init__(self):
        rirs = tuple(self.rirs)
        if not rirs:
            raise ConfigError("a scene needs at least one RIR")
        if len({h.sample_rate for h in rirs}) != 1:
            raise ConfigError("all scene RIRs must share one sample rate")
        if len({h.relative_early_len for h in rirs}) != 1:
            raise ConfigError("all scene RIRs must share one early length")
        if not self.switch_period > 0:
            raise ConfigError("switch period must be positive")
        object.__setattr__(self, "rirs", rirs)


def sabine_reflection(room: RoomSpec) -> float:
    """Uniform wall reflection coefficient matching ``room.rt60`` by Sabine's formula."""
    if math.isinf(room.rt60):
        return 1.0
    alpha = SABINE_CONSTANT * room.volume / (room.surface * room.rt60)
    if alpha > 1.0:
        raise ConfigError(
            f"rt60={room.rt60}s is too short for a {room.dimensions} room "
            f"(Sabine absorption {alpha:.3f} > 1)"
        )
    return math.sqrt(1.0 - alpha)


def _axis_images(length, src, mic, order):
    n = np.arange(-order, order + 1)
    offsets, counts = [], []
    for u in (0, 1):
        offsets.append((1 - 2 * u) * src + 2.0 * n * length - mic)
        counts.append(np.abs(n - u) + np.abs(n))
    return np.concatenate(offsets), np.concatenate(counts)


def allen_berkley_highpass(taps: np.ndarray, sample_rate: int, cutoff: float = 100.0) -> np.ndarray:
    """Second-order high-pass removing the DC build-up of same-sign images."""
    w = 2.0 * np.pi * cutoff / sample_rate
    r1 = math.exp(-w)
    b1 = 2.0 * r1 * math.cos(w)
    b2 = -r1 * r1
    a1 = -(1.0 + r1)
    return lfilter([1.0, a1, r1], [1.0, -b1, -b2], taps)


def _fractional_delay_kernel(frac_offsets):
    """Hann-windowed sinc evaluated at ``n - tau`` offsets."""
    half = (KERNEL_TAPS - 1) / 2 + 1
    return 0.5 * (1.0 + np.cos(np.pi * frac_offsets / half)) * np.sinc(frac_offsets)


def image_sources(room: RoomSpec, sample_rate: int = DEFAULT_SAMPLE_RATE,
                  c: float = SPEED_OF_SOUND, max_delay: float | None = None):
    """Distances and reflection counts of all images contributing before ``max_delay`` s."""
    if room.max_order == "auto":
        orders = [math.ceil(c * room.rt60 / d) if math.isfinite(room.rt60) else 0
                  for d in room.dimensions]
        total_bound = None
    else:
        orders = [room.max_order] * 3
        total_bound = room.max_order
    axes = [_axis_images(d, s, m, o)
            for d, s, m, o in zip(room.dimensions, room.source_pos, room.mic_pos, orders)]
    (ox, cx), (oy, cy), (oz, cz) = axes
    dist = np.sqrt(ox[:, None, None] ** 2 + oy[None, :, None] ** 2 + oz[None, None, :] ** 2)
    count = cx[:, None, None] + cy[None, :, None] + cz[None, None, :]
    keep = np.ones(dist.shape, dtype=bool)
    if max_delay is not None:
        keep &= dist <= max_delay * c
    if total_bound is not None:
        keep &= count <= total_bound
    return dist[keep], count[keep]


def _fit_rt60(edc_db: np.ndarray, sample_rate: int, upper_db: float, lower_db: float) -> float:
    sel = np.flatnonzero((edc_db <= upper_db) & (edc_db >= lower_db))
    if sel.size < 2:
        return math.nan
    slope, _ = np.polyfit(sel / sample_rate, edc_db[sel], 1)
    return -60.0 / slope if slope < 0 else math.inf


def calibrate_reflection(room: RoomSpec, dist: np.ndarray, count: np.ndarray,
                         length: int, sample_rate: int = DEFAULT_SAMPLE_RATE,
                         c: float = SPEED_OF_SOUND, iterations: int = 40) -> float:
    """Wall reflection coefficient whose image-energy decay matches ``room.rt60``.

    Sabine's value is the starting point; the decay rate of an image-source
    response in a shoebox room deviates from the diffuse-field prediction, so
    the coefficient is refined by bisection on the T20-extrapolated RT60 of
    the image energies binned per sample.
    """
    start = sabine_reflection(room)
    idx = np.round(dist * sample_rate / c).astype(np.int64)
    ok = idx < length
    idx, count, dist = idx[ok], count[ok], dist[ok]
    base = 1.0 / (4.0 * np.pi * dist) ** 2

    def measured(r):
        energy = np.bincount(idx, weights=base * r ** (2 * count), minlength=length)
        tail = np.cumsum(energy[::-1])[::-1]
        with np.errstate(divide="ignore"):
            edc = 10.0 * np.log10(tail / tail[0])
        return _fit_rt60(edc, sample_rate, -5.0, -25.0)

    lo, hi = 1e-4, 1.0 - 1e-9
    if not measured(hi) > room.rt60:
        return hi
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        value = measured(mid)
        if math.isnan(value) or value < room.rt60:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    return r if r > 0 else start


def simulate_rir(room: RoomSpec, sample_rate: int = DEFAULT_SAMPLE_RATE,
                 early_len: int = 32, c: float = SPEED_OF_SOUND,
                 length: int | None = None, reflection: float | None = None,
                 calibrate: bool = False, highpass: bool = True) -> RirFilter:
    """Allen-Berkley image-source RIR with fractional-delay image placement.

    ``early_len`` is counted from the direct-path arrival.  The wall
    coefficient comes from Sabine's formula; ``calibrate`` refines it so the
    image-energy decay hits ``room.rt60`` and ``reflection`` overrides both.
    The Allen-Berkley high-pass is applied unless ``highpass`` is false.
    """
    sabine = sabine_reflection(room)
    if length is None:
        if not math.isfinite(room.rt60):
            raise ConfigError("an explicit length is required when rt60 is infinite")
        length = math.ceil(room.rt60 * sample_rate)
    half = (KERNEL_TAPS - 1) // 2
    max_delay = (length + half) / sample_rate
    dist, count = image_sources(room, sample_rate, c, max_delay)
    if reflection is not None:
        r = float(reflection)
    elif calibrate and math.isfinite(room.rt60):
        r = calibrate_reflection(room, dist, count, length, sample_rate, c)
    else:
        r = sabine
    if r == 0.0:
        amp = np.where(count == 0, 1.0, 0.0) / (4.0 * np.pi * dist)
    else:
        amp = r ** count / (4.0 * np.pi * dist)
    tau = dist * sample_rate / c
    nearest = np.round(tau).astype(np.int64)
    taps = np.zeros(length)
    for j in range(-half, half + 1):
        idx = nearest + j
        ok = (idx >= 0) & (idx < length)
        weights = amp[ok] * _fractional_delay_kernel(idx[ok] - tau[ok])
        taps += np.bincount(idx[ok], weights=weights, minlength=length)
    if highpass:
        taps = allen_berkley_highpass(taps, sample_rate)
    onset = min(int(round(room.distance * sample_rate / c)), length - 1)
    meta = {
        "dimensions": list(room.dimensions), "rt60": room.rt60,
        "source_pos": list(room.source_pos), "mic_pos": list(room.mic_pos),
        "seed": room.seed, "reflection": r,
    }
    return RirFilter(taps, sample_rate, min(onset + early_len, length), onset, meta)


def random_positions(dimensions, rng: np.random.Generator, wall_margin: float = 0.5,
                     min_distance: float = 1.0, max_tries: int = 10000):
    """Source and microphone positions away from walls and from each other."""
    dims = np.asarray(dimensions, dtype=np.float64)
    if np.any(dims <= 2 * wall_margin):
        raise ConfigError(f"room {tuple(dims)} too small for a {wall_margin} m wall margin")
    for _ in range(max_tries):
        src = rng.uniform(wall_margin, dims - wall_margin)
        mic = rng.uniform(wall_margin, dims - wall_margin)
        if np.linalg.norm(src - mic) >= min_distance:
            return tuple(src.tolist()), tuple(mic.tolist())
    raise ConfigError(f"could not place source and microphone {min_distance} m apart")


def schroeder_edc(h: RirFilter | np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB (0 dB at the start)."""
    taps = h.taps if isinstance(h, RirFilter) else np.asarray(h)
    energy = np.cumsum(taps[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def estimate_rt60(h: RirFilter, upper_db: float = -5.0, lower_db: float = -25.0) -> float:
    """RT60 extrapolated from a linear fit of the EDC between two levels."""
    value = _fit_rt60(schroeder_edc(h), h.sample_rate, upper_db, lower_db)
    if math.isnan(value):
        raise DataError("RIR decay does not span the fitting range")
    return value


def split_early_late(h: RirFilter) -> tuple[np.ndarray, np.ndarray]:
    return h.taps[:h.early_len].copy(), h.taps[h.early_len:].copy()


def _check_rates(s: Waveform, rate: int):
    if s.sample_rate != rate:
        raise DataError(f"signal rate {s.sample_rate} Hz does not match RIR rate {rate} Hz")


def _late_taps(h: RirFilter) -> np.ndarray:
    late = h.taps.copy()
    late[:h.early_len] = 0.0
    return late


def _conv(x, h, n):
    """Full linear convolution, truncated or zero-padded to ``n`` samples."""
    out = np.zeros(n)
    if h.size and x.size:
        full = fftconvolve(x, h)[:n]
        out[:full.size] = full
    return out


def convolve_static(s: Waveform, h: RirFilter):
    """Reverberant, early and late signals, truncated to ``len(s)``.

    ``y`` is formed as ``early + late`` so the decomposition is sample-exact.
    """
    _check_rates(s, h.sample_rate)
    n = len(s)
    early = _conv(s.samples, h.taps[:h.early_len], n)
    late = _conv(s.samples, _late_taps(h), n)
    y = early + late
    rate = s.sample_rate
    return Waveform(y, rate), Waveform(early, rate), Waveform(late, rate)


def convolve_time_varying(s: Waveform, scene: SceneScript):
    """Input-block switching: each ``switch_period`` block uses the next RIR in cycle."""
    rate = scene.rirs[0].sample_rate
    _check_rates(s, rate)
    n = len(s)
    block = int(round(scene.switch_period * rate))
    early = np.zeros(n)
    late = np.zeros(n)
    for m, start in enumerate(range(0, n, block)):
        h = scene.rirs[m % len(scene.rirs)]
        seg = s.samples[start:start + block]
        span = n - start
        early[start:] += _conv(seg, h.taps[:h.early_len], span)
        late[start:] += _conv(seg, _late_taps(h), span)
    y = early + late
    return Waveform(y, rate), Waveform(early, rate), Waveform(late, rate)
