import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctfderev.ctf import (CtfFilter, ctf_approximation_error, ctf_convolve, ctf_from_rir,
                          ctf_magnitude_kernel, ctf_num_taps)
from ctfderev.dsp import SpectralFrameSet, StftConfig, Waveform, stft
from ctfderev.errors import DataError
from ctfderev.room import RirFilter, RoomSpec, convolve_static, simulate_rir

CFG = StftConfig()


def test_tap_count_for_half_second_rir():
    assert ctf_num_taps(8000, CFG) == 53
    assert ctf_from_rir(np.ones(8000)).num_taps == 53


def test_identity_filter_is_a_no_op(rng):
    spec = stft(rng.standard_normal(3000))
    out = ctf_convolve(spec, CtfFilter.identity(CFG, num_taps=4))
    np.testing.assert_array_equal(out.coeffs, spec.coeffs)


@pytest.mark.parametrize("p0", [0, 1, 3])
def test_hop_multiple_delay_is_exact(p0, rng):
    taps = np.zeros(p0 * 160 + 1)
    taps[-1] = 0.7
    ctf = ctf_from_rir(taps)
    expected = np.zeros(ctf.num_taps, complex)
    expected[p0] = 0.7
    np.testing.assert_allclose(ctf.coeffs, np.broadcast_to(expected, ctf.coeffs.shape), atol=1e-15)
    s = Waveform(rng.standard_normal(6000))
    y, _, _ = convolve_static(s, RirFilter(taps))
    model = ctf_convolve(stft(s), ctf).coeffs
    exact = stft(y).coeffs
    # from frame p0 on, until windows reach the truncated tail; earlier frames
    # would need analysis frames starting before t = 0
    last = (6000 - 400) // 160
    np.testing.assert_allclose(model[:, p0:last], exact[:, p0:last], atol=1e-10)


def test_single_bin_per_tap_convolution_oracle(rng):
    spec = SpectralFrameSet(rng.standard_normal((257, 12)) + 1j * rng.standard_normal((257, 12)), CFG)
    coeffs = rng.standard_normal((257, 3)) + 1j * rng.standard_normal((257, 3))
    out = ctf_convolve(spec, CtfFilter(coeffs, CFG)).coeffs
    k = 17
    ref = np.convolve(np.conj(coeffs[k]), spec.coeffs[k])[:12]
    np.testing.assert_allclose(out[k], ref, atol=1e-12)


@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2**31 - 1))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal(2000), rng.standard_normal(2000)
    ctf = ctf_from_rir(rng.standard_normal(500))
    lhs = ctf_convolve(stft(a * x1 + b * x2), ctf).coeffs
    rhs = a * ctf_convolve(stft(x1), ctf).coeffs + b * ctf_convolve(stft(x2), ctf).coeffs
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))


def test_magnitude_kernel_is_nonnegative_and_matches():
    ctf = ctf_from_rir(np.random.default_rng(0).standard_normal(1000))
    kernel = ctf_magnitude_kernel(ctf)
    assert kernel.shape == (257, ctf.num_taps)
    assert np.all(kernel >= 0)
    np.testing.assert_allclose(kernel, np.abs(ctf.coeffs))


def test_error_bounded_for_simulated_room(rng):
    h = simulate_rir(RoomSpec((6.0, 4.0, 3.5), 0.3, (1.5, 1.5, 1.5), (4.0, 2.5, 1.4)))
    s = Waveform(rng.standard_normal(16000) * 0.1)
    err = ctf_approximation_error(s, h)
    assert 0 < err < 1.0


def test_rejects_bad_shapes():
    with pytest.raises(DataError):
        CtfFilter(np.ones(5), CFG)
    with pytest.raises(DataError):
        ctf_convolve(stft(np.ones(1000)), CtfFilter(np.ones((10, 2)), CFG))
    with pytest.raises(DataError):
        CtfFilter(np.full((257, 2), np.nan), CFG)
