import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctfderev.dsp import Waveform
from ctfderev.errors import ConfigError, DataError
from ctfderev.room import (RirFilter, RoomSpec, SceneScript, convolve_static, convolve_time_varying,
                           estimate_rt60, image_sources, random_positions, sabine_reflection,
                           schroeder_edc, simulate_rir, split_early_late)

ROOM1 = dict(dimensions=(8.0, 6.0, 4.0), source_pos=(2.0, 3.0, 1.5), mic_pos=(5.0, 2.5, 1.6))


def test_sabine_room1_hand_value():
    room = RoomSpec(rt60=0.5, **ROOM1)
    alpha = 0.1611 * 192 / (208 * 0.5)
    assert alpha == pytest.approx(0.2974, abs=1e-4)
    assert sabine_reflection(room) == pytest.approx(0.8382, abs=1e-4)


def test_sabine_limits():
    assert sabine_reflection(RoomSpec(rt60=math.inf, **ROOM1)) == 1.0
    # alpha exactly 1 at rt60 = 0.1611 V / S
    room = RoomSpec(rt60=0.1611 * 192 / 208, **ROOM1)
    assert sabine_reflection(room) == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(ConfigError, match="too short"):
        sabine_reflection(RoomSpec(rt60=0.05, **ROOM1))


def test_room_spec_validation():
    with pytest.raises(ConfigError):
        RoomSpec((8, 6, 4), 0.5, (9, 1, 1), (1, 1, 1))
    with pytest.raises(ConfigError):
        RoomSpec((8, 6, 4), -1.0, (1, 1, 1), (2, 2, 2))
    with pytest.raises(ConfigError):
        RoomSpec((8, 0, 4), 0.5, (1, 1, 1), (2, 2, 2))


def test_anechoic_single_pulse():
    room = RoomSpec((8.0, 6.0, 4.0), 0.5, (2.0, 3.0, 2.0), (3.3, 3.4, 2.1))
    h = simulate_rir(room, reflection=0.0, highpass=False, length=400)
    d = room.distance
    tau = d * 16000 / 343
    n = np.arange(400)
    t = n - tau
    kernel = np.where(np.abs(t) <= 40.5, 0.5 * (1 + np.cos(np.pi * t / 41)) * np.sinc(t), 0.0)
    np.testing.assert_allclose(h.taps, kernel / (4 * np.pi * d), atol=1e-12)


def test_direct_path_peak_at_one_metre():
    room = RoomSpec((8.0, 6.0, 4.0), 0.3, (3.0, 3.0, 2.0), (4.0, 3.0, 2.0))
    h = simulate_rir(room)
    assert abs(int(np.argmax(np.abs(h.taps))) - 47) <= 2
    assert h.onset == round(16000 / 343)


def test_first_arrival_matches_geometry():
    room = RoomSpec((6.0, 4.0, 3.5), 0.3, (1.0, 1.2, 1.5), (4.1, 2.9, 1.1))
    h = simulate_rir(room)
    tau = room.distance * 16000 / 343
    first = np.flatnonzero(np.abs(h.taps) > 0.05 * np.abs(h.taps).max())[0]
    assert abs(first - tau) <= 40


@pytest.mark.parametrize("rt60", [0.3, 0.5])
def test_decay_time_within_20_percent(rt60):
    room = RoomSpec((5.0, 4.0, 3.0), rt60, (1.2, 1.5, 1.4), (3.6, 2.7, 1.6))
    h = simulate_rir(room)
    assert len(h) == math.ceil(rt60 * 16000)
    assert estimate_rt60(h) == pytest.approx(rt60, rel=0.2)
    edc = schroeder_edc(h)
    assert edc[0] == 0 and np.all(np.diff(edc[np.isfinite(edc)]) <= 1e-9)


def test_simulation_is_deterministic():
    room = RoomSpec(rt60=0.3, **ROOM1)
    a, b = simulate_rir(room), simulate_rir(room)
    assert np.array_equal(a.taps, b.taps)


def test_swap_source_and_mic():
    room = RoomSpec(rt60=0.3, **ROOM1)
    d1, c1 = image_sources(room, max_delay=0.3)
    d2, c2 = image_sources(room.swapped(), max_delay=0.3)
    np.testing.assert_allclose(np.sort(d1), np.sort(d2), atol=1e-9)
    h1, h2 = simulate_rir(room), simulate_rir(room.swapped())
    np.testing.assert_allclose(np.abs(h1.taps), np.abs(h2.taps), atol=1e-9)


def test_max_order_bounds_reflections():
    room = RoomSpec((8.0, 6.0, 4.0), 0.5, (2.0, 3.0, 1.5), (5.0, 2.5, 1.6), max_order=2)
    _, count = image_sources(room)
    assert count.max() == 2 and count.min() == 0
    assert np.sum(count == 0) == 1


def test_random_positions_respect_constraints():
    rng = np.random.default_rng(0)
    for _ in range(50):
        src, mic = random_positions((6.0, 4.0, 3.5), rng)
        assert np.linalg.norm(np.subtract(src, mic)) >= 1.0
        for p in (src, mic):
            assert all(0.5 <= v <= d - 0.5 for v, d in zip(p, (6.0, 4.0, 3.5)))


def test_split_early_late():
    h = RirFilter(np.arange(1.0, 101.0), early_len=32)
    early, late = split_early_late(h)
    assert early.size == 32 and late.size == 68
    np.testing.assert_array_equal(np.concatenate([early, late]), h.taps)
    full = RirFilter(np.ones(10))
    assert split_early_late(full)[1].size == 0


def test_rir_filter_validation():
    with pytest.raises(DataError):
        RirFilter(np.ones(5), early_len=0)
    with pytest.raises(DataError):
        RirFilter(np.ones(5), early_len=6)
    with pytest.raises(DataError):
        RirFilter(np.array([1.0, np.inf]))


def test_early_len_counts_from_direct_path():
    h = RirFilter(np.ones(200), onset=50).with_early_len(32)
    assert h.early_len == 82 and h.relative_early_len == 32


def test_static_convolution_examples(rng):
    s = Waveform(rng.standard_normal(500))
    y, _, _ = convolve_static(s, RirFilter(np.array([1.0])))
    np.testing.assert_allclose(y.samples, s.samples)
    taps = np.zeros(4)
    taps[3] = 0.5
    y, _, _ = convolve_static(s, RirFilter(taps))
    np.testing.assert_allclose(y.samples[3:], 0.5 * s.samples[:-3], atol=1e-12)
    np.testing.assert_allclose(y.samples[:3], 0, atol=1e-12)


@given(st.integers(1, 300), st.integers(0, 2**31 - 1))
def test_static_identity_exact(q_e, seed):
    rng = np.random.default_rng(seed)
    s = Waveform(rng.standard_normal(2000))
    h = RirFilter(rng.standard_normal(300) * np.exp(-np.arange(300) / 50), early_len=q_e)
    y, ye, yl = convolve_static(s, h)
    assert np.array_equal(y.samples, ye.samples + yl.samples)
    ref = np.convolve(s.samples, h.taps)[:2000]
    np.testing.assert_allclose(y.samples, ref, atol=1e-10)


def test_rate_mismatch():
    with pytest.raises(DataError):
        convolve_static(Waveform(np.ones(10), 8000), RirFilter(np.ones(3)))


def test_time_varying_single_rir_equals_static(rng):
    s = Waveform(rng.standard_normal(40000))
    h = RirFilter(rng.standard_normal(800) * np.exp(-np.arange(800) / 100), early_len=40)
    static = convolve_static(s, h)
    varying = convolve_time_varying(s, SceneScript((h,)))
    same = convolve_time_varying(s, SceneScript((h, h, h)))
    for a, b, c in zip(static, varying, same):
        np.testing.assert_allclose(b.samples, a.samples, atol=1e-10)
        np.testing.assert_allclose(c.samples, a.samples, atol=1e-10)


def test_time_varying_two_impulses_block_oracle(rng):
    s = Waveform(rng.standard_normal(40000))
    d0 = RirFilter(np.array([1.0, 0.0]), early_len=2)
    d1 = RirFilter(np.array([0.0, 1.0]), early_len=2)
    y, ye, yl = convolve_time_varying(s, SceneScript((d0, d1), 1.0))
    x = s.samples
    expected = np.zeros_like(x)
    for m, start in enumerate(range(0, x.size, 16000)):
        block = np.zeros_like(x)
        block[start:start + 16000] = x[start:start + 16000]
        expected += block if m % 2 == 0 else np.concatenate([[0.0], block[:-1]])
    np.testing.assert_allclose(y.samples, expected, atol=1e-12)
    # the delayed block's last sample spills into the next block
    assert y.samples[32000] == pytest.approx(x[32000] + x[31999], abs=1e-12)
    assert np.array_equal(y.samples, ye.samples + yl.samples)


def test_scene_requires_shared_early_length():
    a = RirFilter(np.ones(100), early_len=40)
    b = RirFilter(np.ones(100), early_len=50)
    with pytest.raises(ConfigError):
        SceneScript((a, b))
    with pytest.raises(ConfigError):
        SceneScript(())
