"""Tests for constellations, RRC pulses, frequency shifting and resampling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combdsp.errors import ConfigurationError
from combdsp.sigkit import (
    DualPolSignal,
    fractional_delay,
    frequency_shift,
    qam_constellation,
    resample,
    rrc_frequency_response,
    rrc_taps,
)

RNG = np.random.default_rng(2024)


def tone(freq, fs, n, amp=1.0):
    t = np.arange(n) / fs
    c = amp * np.exp(2j * np.pi * freq * t)
    return DualPolSignal(samples_x=c, samples_y=0.5 * c, sample_rate=fs)


class TestQamConstellation:
    def test_rejects_unsupported_order(self):
        with pytest.raises(ConfigurationError, match="8"):
            qam_constellation(8)

    @pytest.mark.parametrize("order", [16, 32, 64])
    def test_unit_energy_and_bijective_labels(self, order):
        c = qam_constellation(order)
        assert len(c.points) == order
        assert abs(np.mean(np.abs(c.points) ** 2) - 1.0) < 1e-12
        m = c.bits_per_symbol
        codes = {tuple(row) for row in c.labels}
        assert len(codes) == order and m == int(math.log2(order))

    def test_64qam_min_distance_brute_force(self):
        # oracle: enumerate all point pairs; raw +-1..+-7 grid has mean energy 42
        c = qam_constellation(64)
        d2 = np.abs(c.points[:, None] - c.points[None, :]) ** 2
        d2min = np.min(d2[d2 > 1e-12])
        assert abs(d2min - 4.0 / 42.0) < 1e-12

    def test_32qam_cross_geometry(self):
        # oracle: enumerate the 6x6 grid minus corners and compare as sets
        c = qam_constellation(32)
        scale = math.sqrt(np.mean([i**2 + q**2
                                   for i in range(-5, 6, 2) for q in range(-5, 6, 2)
                                   if not (abs(i) == 5 and abs(q) == 5)]))
        expected = {(i, q)
                    for i in range(-5, 6, 2) for q in range(-5, 6, 2)
                    if not (abs(i) == 5 and abs(q) == 5)}
        got = {(int(round(p.real * scale)), int(round(p.imag * scale))) for p in c.points}
        assert got == expected
        assert len(c.points) == 32

    @pytest.mark.parametrize("order,max_ham", [(16, 1), (64, 1), (32, 2)])
    def test_gray_property(self, order, max_ham):
        c = qam_constellation(order)
        d = np.abs(c.points[:, None] - c.points[None, :])
        dmin = np.min(d[d > 1e-12])
        for a in range(order):
            for b in range(a + 1, order):
                if d[a, b] < dmin + 1e-9:
                    assert np.sum(c.labels[a] != c.labels[b]) <= max_ham

    def test_pure_and_idempotent(self):
        a, b = qam_constellation(64), qam_constellation(64)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_bit_mapping_roundtrip(self):
        c = qam_constellation(32)
        bits = RNG.integers(0, 2, 5 * 1000).astype(np.uint8)
        syms = c.map_bits(bits)
        back = c.bits_of(c.hard_decide(syms))
        np.testing.assert_array_equal(back, bits)


class TestRrcTaps:
    def test_parameter_validation(self):
        for bad in [dict(beta=-0.1, sps=4, span_symbols=16),
                    dict(beta=1.1, sps=4, span_symbols=16),
                    dict(beta=0.2, sps=1, span_symbols=16),
                    dict(beta=0.2, sps=4, span_symbols=6),
                    dict(beta=0.2, sps=4, span_symbols=15)]:
            with pytest.raises(ConfigurationError):
                rrc_taps(**bad)

    @pytest.mark.parametrize("beta", [0.0, 0.01, 0.1, 0.2, 0.5, 1.0])
    def test_unit_energy_and_symmetry(self, beta):
        p = rrc_taps(beta, 4, 32)
        assert abs(np.sum(p.taps**2) - 1.0) < 1e-9
        assert np.max(np.abs(p.taps - p.taps[::-1])) < 1e-12

    def test_center_tap_matches_inverse_fft_oracle(self):
        # oracle: numerically invert the analytic frequency response and
        # compare the t=0 value against the closed-form limit
        beta, sps = 0.2, 8
        n = 1 << 18
        f = np.fft.fftfreq(n, d=1.0 / sps)
        h0_oracle = np.sum(rrc_frequency_response(f, 1.0, beta)) * (sps / n)
        assert abs(h0_oracle - (1 - beta + 4 * beta / np.pi)) < 1e-9
        p = rrc_taps(beta, sps, 32)
        unnorm = p.taps / p.taps[len(p.taps) // 2] * (1 - beta + 4 * beta / np.pi)
        assert abs(unnorm[len(unnorm) // 2] - h0_oracle) < 1e-9

    def test_singular_point_uses_analytic_limit(self):
        # beta=0.25, sps=4: |t|=1/(4 beta)=1 symbol lands exactly on a tap
        beta = 0.25
        p = rrc_taps(beta, 4, 16)
        center = len(p.taps) // 2
        expected = (beta / math.sqrt(2)) * (
            (1 + 2 / np.pi) * math.sin(np.pi / (4 * beta))
            + (1 - 2 / np.pi) * math.cos(np.pi / (4 * beta))
        )
        scale = p.taps[center] / (1 - beta + 4 * beta / np.pi)
        assert abs(p.taps[center + 4] - scale * expected) < 1e-12
        assert np.all(np.isfinite(p.taps))

    @pytest.mark.parametrize("beta,span", [(0.2, 32), (0.5, 32)])
    def test_cascade_is_kronecker_delta(self, beta, span):
        # convolution oracle: RRC * RRC sampled at symbol instants
        sps = 4
        p = rrc_taps(beta, sps, span)
        rc = np.convolve(p.taps, p.taps)
        center = len(rc) // 2
        ks = np.arange(-(center // sps), center // sps + 1)
        sym = rc[center + ks * sps]
        assert np.max(np.abs(sym[ks != 0])) / rc[center] < 1e-3

    @pytest.mark.parametrize("beta,span", [
        (0.01, 1024), (0.05, 256), (0.1, 128), (0.2, 64), (0.5, 16), (1.0, 8),
    ])
    def test_half_power_at_nyquist_edge(self, beta, span):
        # spans chosen so truncation error stays below the 1e-3 tolerance
        p = rrc_taps(beta, 4, span)
        w = np.exp(-2j * np.pi * (0.5 / 4) * np.arange(len(p.taps)))
        ratio = abs(np.sum(p.taps * w)) / abs(np.sum(p.taps))
        assert abs(ratio - 1 / math.sqrt(2)) < 1e-3

    def test_half_power_exact_response_all_beta(self):
        for beta in (0.0, 0.01, 0.3, 1.0):
            h = rrc_frequency_response(np.array([0.5]), 1.0, beta)
            assert abs(h[0] - 1 / math.sqrt(2)) < 1e-15


class TestFrequencyShift:
    def test_zero_shift_is_identity(self):
        s = tone(1e6, 100e6, 1024)
        out = frequency_shift(s, 0.0)
        np.testing.assert_array_equal(out.samples_x, s.samples_x)
        np.testing.assert_array_equal(out.samples_y, s.samples_y)

    def test_shift_by_sample_rate_wraps_to_identity(self):
        s = tone(3e6, 100e6, 4096)
        out = frequency_shift(s, 100e6)
        np.testing.assert_array_equal(out.samples_x, s.samples_x)
        assert out.center_offset == s.center_offset - 100e6

    def test_aliasing_identity(self):
        # shifting by df and df - fs gives identical samples
        fs, df = 2 * 24.5e9, 25e9
        s = tone(1e9, fs, 4096)
        a = frequency_shift(s, df)
        b = frequency_shift(s, df - fs)
        np.testing.assert_array_equal(a.samples_x, b.samples_x)

    def test_shift_moves_tone(self):
        fs, n = 128e6, 4096
        s = tone(0.0, fs, n)
        out = frequency_shift(s, 32 * fs / n)
        spec = np.abs(np.fft.fft(out.samples_x))
        assert np.argmax(spec) == 32

    def test_additivity_invariant(self):
        fs, n = 100e6, 4096
        s = tone(1.7e6, fs, n)
        a, b = 13.37e6, -4.1e6
        once = frequency_shift(s, a + b)
        twice = frequency_shift(frequency_shift(s, a), b)
        assert np.max(np.abs(once.samples_x - twice.samples_x)) < 1e-12
        assert once.center_offset == pytest.approx(twice.center_offset)

    @settings(max_examples=25, deadline=None)
    @given(df=st.floats(min_value=-3e9, max_value=3e9, allow_nan=False))
    def test_preserves_power_and_length(self, df):
        s = tone(1e8, 10e9, 512)
        out = frequency_shift(s, df)
        assert len(out) == len(s) and out.sample_rate == s.sample_rate
        assert out.mean_power() == pytest.approx(s.mean_power(), rel=1e-9)


class TestResample:
    def test_identity(self):
        s = tone(1e6, 64e6, 512)
        out = resample(s, 64e6)
        np.testing.assert_array_equal(out.samples_x, s.samples_x)

    def test_round_trip_tone(self):
        # frame-periodic tone at ~0.1*fs (block resampler assumes circular buffers)
        fs, n = 80e6, 4096
        s = tone(round(0.1 * n) * fs / n, fs, n)
        down = resample(s, fs / 2)
        back = resample(down, fs)
        err = np.max(np.abs(back.samples_x - s.samples_x))
        assert err < 1e-3
        assert back.sample_rate == fs and len(back) == n

    def test_out_of_band_rejection(self):
        # periodogram oracle: white input halved in rate must keep all
        # energy below the new Nyquist; the spectrum is truncated exactly
        n = 1 << 14
        x = RNG.standard_normal(n) + 1j * RNG.standard_normal(n)
        s = DualPolSignal(samples_x=x, samples_y=x[::-1].copy(), sample_rate=1e9)
        down = resample(s, 5e8)
        up = resample(down, 1e9)
        spec = np.abs(np.fft.fft(up.samples_x)) ** 2
        band = np.fft.fftfreq(len(spec), 1e-9)
        out_of_band = spec[np.abs(band) > 2.5e8 * 1.001].sum()
        in_band = spec[np.abs(band) <= 2.5e8].sum()
        assert 10 * np.log10(out_of_band / in_band + 1e-30) < -40

    def test_irrational_ratio_rejected(self):
        s = tone(1e6, 64e6, 512)
        with pytest.raises(ConfigurationError):
            resample(s, 64e6 * math.pi)


class TestFractionalDelay:
    def test_integer_delay_is_circular_roll(self):
        s = tone(3e6, 64e6, 256)
        out = fractional_delay(s, 7)
        np.testing.assert_allclose(out.samples_x, np.roll(s.samples_x, 7), atol=1e-12)

    def test_fractional_delay_of_tone(self):
        fs, n, f = 64e6, 1024, 2e6
        s = tone(f, fs, n)
        out = fractional_delay(s, 0.5)
        expected = s.samples_x * np.exp(-2j * np.pi * f * 0.5 / fs)
        np.testing.assert_allclose(out.samples_x, expected, atol=1e-9)


class TestDualPolSignal:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            DualPolSignal(samples_x=np.ones(4), samples_y=np.ones(3), sample_rate=1.0)
        with pytest.raises(ConfigurationError):
            DualPolSignal(samples_x=np.ones(4), samples_y=np.ones(4), sample_rate=0.0)
        with pytest.raises(ConfigurationError):
            DualPolSignal(samples_x=np.array([np.nan + 0j, 1]), samples_y=np.ones(2),
                          sample_rate=1.0)

    def test_operations_keep_two_polarizations(self):
        s = tone(1e6, 64e6, 256)
        for op in (lambda v: frequency_shift(v, 5e6),
                   lambda v: resample(v, 32e6),
                   lambda v: fractional_delay(v, 1.25)):
            out = op(s)
            assert out.pol_stack().shape[0] == 2
            # x stays x: the per-pol amplitude ratio is preserved
            rx = np.mean(np.abs(out.samples_x)) / np.mean(np.abs(out.samples_y))
            assert rx == pytest.approx(2.0, rel=1e-6)
