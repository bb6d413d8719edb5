"""Seeded speech-like test signals for running the pipeline without a licensed corpus.

Each utterance is a string of syllables: an optional fricative burst
(high-passed noise) followed by a voiced vowel (glottal pulse train through
three formant resonators with a gliding pitch), separated by short pauses.
It is not speech, but it has speech's harmonic structure, formant peaks,
onsets and gaps, which is what reverberation smears.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter

from ..dsp import DEFAULT_SAMPLE_RATE, Waveform, write_wav


def _resonator(x: np.ndarray, freq: float, bandwidth: float, fs: int) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def _vowel(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    f0_start = rng.uniform(90.0, 230.0)
    f0 = np.linspace(f0_start, f0_start * rng.uniform(0.8, 1.2), n)
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    # soften the pulse train into a glottal-like source
    source = lfilter([1.0], [1.0, -0.95], pulses)
    source += 0.02 * rng.standard_normal(n)
    formants = (rng.uniform(300, 800), rng.uniform(900, 2300), rng.uniform(2400, 3200))
    out = np.zeros(n)
    for f, gain in zip(formants, (1.0, 0.6, 0.3)):
        out += gain * _resonator(source, f, rng.uniform(60, 130), fs)
    return out


def _fricative(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    b, a = butter(2, rng.uniform(2500, 5000) / (fs / 2), btype="high")
    return lfilter(b, a, rng.standard_normal(n))


def _envelope(n: int, fs: int, ramp: float = 0.02) -> np.ndarray:
    m = min(int(ramp * fs), n // 2)
    env = np.ones(n)
    if m:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(m) / m)
        env[:m] = r
        env[n - m:] = r[::-1]
    return env


def synth_utterance(seed: int, duration: float = 3.0, sample_rate: int = DEFAULT_SAMPLE_RATE,
                    rms_db: float = -25.0) -> Waveform:
    rng = np.random.default_rng(seed)
    total = int(round(duration * sample_rate))
    out = np.zeros(total)
    pos = int(rng.uniform(0.05, 0.2) * sample_rate)
    while pos < total:
        if rng.random() < 0.4:
            n = int(rng.uniform(0.05, 0.12) * sample_rate)
            seg = _fricative(rng, n, sample_rate)
            seg *= rng.uniform(0.1, 0.3) / (np.std(seg) + 1e-12)
            end = min(total, pos + n)
            out[pos:end] += (seg * _envelope(n, sample_rate, 0.01))[:end - pos]
            pos = end
        n = int(rng.uniform(0.12, 0.35) * sample_rate)
        seg = _vowel(rng, n, sample_rate)
        seg *= rng.uniform(0.5, 1.0) / (np.std(seg) + 1e-12)
        end = min(total, pos + n)
        out[pos:end] += (seg * _envelope(n, sample_rate))[:end - pos]
        pos = end + int(rng.uniform(0.04, 0.3) * sample_rate)
    # recorded speech carries no DC or sub-audio rumble
    b, a = butter(2, 70.0 / (sample_rate / 2), btype="high")
    out = lfilter(b, a, out)
    out *= 10 ** (rms_db / 20) / (np.sqrt(np.mean(out ** 2)) + 1e-12)
    peak = np.max(np.abs(out))
    if peak > 0.99:
        out *= 0.99 / peak
    return Waveform(out, sample_rate)


def write_corpus(directory: str | Path, counts: dict[str, int], seed: int = 0,
                 duration: float = 3.0, sample_rate: int = DEFAULT_SAMPLE_RATE) -> list[Path]:
    """Write ``directory/<split>/utt_<i>.wav`` for each split; returns the paths."""
    directory = Path(directory)
    paths = []
    offset = 0
    for split in ("train", "validation", "test"):
        sub = directory / split
        sub.mkdir(parents=True, exist_ok=True)
        for i in range(counts.get(split, 0)):
            path = sub / f"utt_{i:04d}.wav"
            write_wav(path, synth_utterance(seed * 100003 + offset + i, duration, sample_rate))
            paths.append(path)
        offset += counts.get(split, 0)
    return paths
