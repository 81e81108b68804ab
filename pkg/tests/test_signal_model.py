import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdtomo.signal_model import (ButterworthSpec, TemporalMode, butterworth_gain, filtered_ideal_mode,
                                 gaussian_mode, ideal_mode, overlap, spectral_bandwidth, temporal_width)

GAMMA = 9.3e6
T0 = -1.05e-6
DT = 0.2e-9
SPAN = 0.5e-6


@pytest.fixture(scope="module")
def u_id():
    return ideal_mode(GAMMA, T0, DT, SPAN)


def test_ideal_mode_is_causal_with_peak_at_t0(u_id):
    t = u_id.t
    assert np.all(u_id.samples[t > T0 + 1e-15] == 0.0)
    peak = np.argmax(u_id.samples)
    assert peak == np.argmin(np.abs(t - T0))


def test_ideal_mode_normalized(u_id):
    assert abs(np.sum(u_id.samples**2) * DT - 1) < 1e-9


def test_ideal_mode_half_density_time():
    # u^2 halves ln(2)/(2 pi Gamma) = 11.86 ns before t0
    lag = np.log(2) / (2 * np.pi * GAMMA)
    assert lag == pytest.approx(11.86e-9, rel=1e-3)
    # grid aligned so that t0 and t0 - lag are both nodes
    dt = lag / 50
    u = ideal_mode(GAMMA, T0, dt, 400 * lag, t_start=T0 - 300 * lag)
    i0 = int(round((T0 - u.t_start) / dt))
    assert u.samples[i0 - 50] ** 2 == pytest.approx(0.5 * u.samples[i0] ** 2, rel=1e-6)


def test_ideal_mode_short_span_raises():
    with pytest.raises(ValueError, match="mode energy"):
        ideal_mode(GAMMA, T0, DT, span=40e-9)


@given(st.floats(1e6, 5e7), st.floats(0.05e-9, 2e-9))
@settings(max_examples=30, deadline=None)
def test_ideal_mode_normalization_property(gamma, dt):
    span = 8.0 / (np.pi * gamma)
    u = ideal_mode(gamma, 0.0, dt, span, t_start=-6.0 / (np.pi * gamma))
    assert abs(u.energy() - 1) < 1e-9
    assert np.all(u.samples[u.t > 1e-15] == 0)


def test_butterworth_examples():
    spec = ButterworthSpec(100e6, g0=2.0)
    assert butterworth_gain(0.0, spec) == 2.0
    assert butterworth_gain(100e6, spec) == pytest.approx(2 / np.sqrt(2), rel=1e-15)
    assert butterworth_gain(200e6, spec) == pytest.approx(2 / np.sqrt(17), rel=1e-15)


@given(st.floats(-1e10, 1e10), st.floats(1e3, 1e9))
def test_butterworth_even_and_bounded(f, fc):
    spec = ButterworthSpec(fc)
    g = butterworth_gain(f, spec)
    assert g == butterworth_gain(-f, spec)
    assert 0 <= g <= 1


@given(st.floats(0, 1e9), st.floats(0, 1e9))
def test_butterworth_monotone(f1, f2):
    spec = ButterworthSpec(50e6)
    lo, hi = sorted([f1, f2])
    assert butterworth_gain(hi, spec) <= butterworth_gain(lo, spec)


def test_butterworth_spec_validation():
    with pytest.raises(ValueError):
        ButterworthSpec(0.0)
    with pytest.raises(ValueError):
        ButterworthSpec(1e6, g0=-1)


def test_filtered_mode_wide_cutoff_is_identity(u_id):
    # the step at t0 keeps a Lorentzian tail, so convergence is slow in f_c
    ov = [overlap(filtered_ideal_mode(u_id, ButterworthSpec(k * GAMMA)), u_id) for k in (1e2, 1e3, 1e4)]
    assert np.all(np.diff(ov) > 0)
    assert ov[-1] >= 0.9999


def test_filtered_mode_at_native_cutoff(u_id):
    assert overlap(filtered_ideal_mode(u_id, ButterworthSpec(301e6)), u_id) >= 0.99


def test_filtered_mode_11mhz_lower_and_wider(u_id):
    out = filtered_ideal_mode(u_id, ButterworthSpec(11e6))
    assert out.samples.max() < u_id.samples.max()
    ratio = temporal_width(out) / temporal_width(u_id)
    # "almost double": amplitude FWHM ratio of the zero-phase model is 2.17
    assert 1.6 < ratio < 2.5


def test_filter_overlap_monotone_in_cutoff(u_id):
    ov = [overlap(filtered_ideal_mode(u_id, ButterworthSpec(fc)), u_id) for fc in (11e6, 31e6, 101e6, 301e6, 3e9)]
    assert np.all(np.diff(ov) > 0)


def test_bandwidth_of_ideal_mode_is_gamma(u_id):
    assert spectral_bandwidth(u_id) == pytest.approx(GAMMA, rel=0.02)


@pytest.mark.parametrize("sigma", [5e-9, 20e-9])
def test_bandwidth_of_gaussian(sigma):
    g = gaussian_mode(sigma, 0.1e-9, 20 * sigma)
    expected = np.sqrt(np.log(2)) / (np.sqrt(2) * np.pi * sigma)
    assert spectral_bandwidth(g) == pytest.approx(expected, rel=0.02)


@pytest.mark.parametrize("fc", [11e6, 31e6, 101e6, 301e6])
def test_filtering_never_widens_bandwidth(u_id, fc):
    b = spectral_bandwidth(u_id)
    out = spectral_bandwidth(filtered_ideal_mode(u_id, ButterworthSpec(fc)))
    assert out <= b * (1 + 1e-6)
    if fc == 11e6:
        assert out < b


def test_bandwidth_single_sample_raises():
    with pytest.raises(ValueError):
        spectral_bandwidth(TemporalMode(np.ones(1), 1e-9))


def test_normalized_sign_and_zero_mode():
    m = TemporalMode(-np.array([0.0, 1.0, 3.0, 1.0]), 1.0).normalized()
    assert m.samples.max() > 0 and abs(m.energy() - 1) < 1e-12
    with pytest.raises(ValueError):
        TemporalMode(np.zeros(4), 1.0).normalized()


def test_temporal_mode_rejects_nonfinite():
    with pytest.raises(ValueError):
        TemporalMode(np.array([0.0, np.nan]), 1.0)


def test_overlap_requires_same_grid(u_id):
    with pytest.raises(ValueError):
        overlap(u_id, TemporalMode(u_id.samples[:-1], DT, u_id.t_start))
