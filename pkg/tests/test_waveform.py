import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coreloss.errors import DataError
from coreloss.waveform import (
    FEATURE_NAMES,
    FLUX_LENGTH,
    FluxWaveform,
    b_max,
    delta_b,
    derivative,
    extract_features,
    segment_slopes,
    synth_waveform,
)

IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}
PHASE = np.arange(FLUX_LENGTH) / FLUX_LENGTH


def const(value=0.2, f=1e5):
    return FluxWaveform(np.full(FLUX_LENGTH, value), f)


class TestFluxWaveform:
    def test_rejects_wrong_length(self):
        with pytest.raises(DataError):
            FluxWaveform(np.zeros(1023), 1e5)

    def test_rejects_non_finite(self):
        v = np.zeros(FLUX_LENGTH)
        v[3] = np.nan
        with pytest.raises(DataError):
            FluxWaveform(v, 1e5)

    @pytest.mark.parametrize("f", [0.0, -1.0, np.inf])
    def test_rejects_bad_frequency(self, f):
        with pytest.raises(DataError):
            FluxWaveform(np.zeros(FLUX_LENGTH), f)

    def test_values_are_read_only(self):
        w = synth_waveform("sine", 0.1, 1e5)
        with pytest.raises(ValueError):
            w.values[0] = 1.0

    def test_dt(self):
        w = synth_waveform("sine", 0.1, 2e5)
        assert w.dt == pytest.approx(1 / (1024 * 2e5), rel=1e-15)
        assert w.period == pytest.approx(5e-6)


class TestSynthWaveform:
    def test_sine_extrema(self):
        w = synth_waveform("sine", 0.1, 1e5)
        assert w.values.max() == pytest.approx(0.1, abs=1e-15)
        assert w.values.min() == pytest.approx(-0.1, abs=1e-15)
        assert delta_b(w) == pytest.approx(0.2, abs=1e-15)
        assert b_max(w) == pytest.approx(0.1, abs=1e-15)

    def test_symmetric_triangle_slope(self):
        a, f = 0.07, 2e5
        w = synth_waveform("triangular", a, f, duty=0.5)
        np.testing.assert_allclose(np.abs(segment_slopes(w)), 4 * a * f, rtol=1e-12)

    def test_flat_zero_trapezoid_equals_triangle(self):
        tri = synth_waveform("triangular", 0.1, 1e5, duty=0.375)
        trap = synth_waveform("trapezoidal", 0.1, 1e5, duty=0.375, flat=0.0)
        np.testing.assert_array_equal(tri.values, trap.values)

    @pytest.mark.parametrize("cls,duty,flat", [
        ("sine", 0.5, 0.0), ("triangular", 0.25, 0.0), ("trapezoidal", 0.25, 0.125)])
    def test_zero_mean_and_peak(self, cls, duty, flat):
        w = synth_waveform(cls, 0.3, 1e5, duty=duty, flat=flat)
        assert abs(w.values.mean()) < 1e-14
        assert w.values.max() == pytest.approx(0.3, abs=1e-15)

    def test_trapezoid_dwells(self):
        w = synth_waveform("trapezoidal", 1.0, 1e5, duty=0.25, flat=0.125)
        top = np.count_nonzero(w.values == 1.0)
        bottom = np.count_nonzero(w.values == -1.0)
        assert top == 129 and bottom == 129  # 128 dwell samples plus the vertex

    @pytest.mark.parametrize("kwargs", [
        dict(waveform_class="triangular", duty=0.0),
        dict(waveform_class="triangular", duty=1.0),
        dict(waveform_class="trapezoidal", duty=0.5, flat=0.25),
        dict(waveform_class="trapezoidal", duty=0.5, flat=-0.1),
        dict(waveform_class="square"),
    ])
    def test_rejects_bad_shape(self, kwargs):
        with pytest.raises(DataError):
            synth_waveform(amplitude=0.1, frequency=1e5, **kwargs)

    @pytest.mark.parametrize("amp,f", [(0.0, 1e5), (0.1, 0.0)])
    def test_rejects_non_positive(self, amp, f):
        with pytest.raises(DataError):
            synth_waveform("sine", amp, f)


class TestCalculus:
    def test_delta_b_constant(self):
        assert delta_b(const()) == 0.0

    def test_delta_b_bound(self):
        v = np.zeros(FLUX_LENGTH)
        v[10], v[20] = -0.3, 0.1
        assert delta_b(FluxWaveform(v, 1e5)) >= 0.4

    @given(st.floats(-5, 5))
    def test_delta_b_translation_invariant(self, offset):
        w = synth_waveform("triangular", 0.2, 1e5, duty=0.25)
        shifted = FluxWaveform(w.values + offset, w.frequency)
        assert delta_b(shifted) == pytest.approx(delta_b(w), abs=1e-12)

    def test_sine_derivative(self):
        a, f = 0.1, 1e5
        w = synth_waveform("sine", a, f)
        peak = 2 * np.pi * f * a
        d = derivative(w)
        assert abs(np.max(np.abs(d)) - peak) / peak < 1e-3
        np.testing.assert_allclose(d, peak * np.cos(2 * np.pi * PHASE), atol=1e-3 * peak)

    def test_constant_derivative_zero(self):
        np.testing.assert_array_equal(derivative(const()), 0.0)

    def test_derivative_mean_zero(self):
        rng = np.random.default_rng(1)
        w = FluxWaveform(rng.normal(size=FLUX_LENGTH), 1e5)
        d = derivative(w)
        assert abs(d.mean()) < 1e-9 * np.max(np.abs(d))

    @settings(max_examples=30)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
    def test_derivative_linear(self, alpha, beta, seed):
        rng = np.random.default_rng(seed)
        b1, b2 = rng.normal(size=(2, FLUX_LENGTH))
        f = 1e5
        lhs = derivative(FluxWaveform(alpha * b1 + beta * b2, f))
        rhs = alpha * derivative(FluxWaveform(b1, f)) + beta * derivative(FluxWaveform(b2, f))
        scale = max(np.max(np.abs(rhs)), 1.0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * scale)


class TestFeatures:
    def test_count_and_names(self):
        assert len(FEATURE_NAMES) == 33
        assert len(set(FEATURE_NAMES)) == 33
        f = extract_features(synth_waveform("sine", 0.1, 1e5))
        assert f.shape == (33,)

    def test_pure_sine(self):
        a = 0.1
        f = extract_features(synth_waveform("sine", a, 1e5))
        assert abs(f[IDX["b_mean"]]) < 1e-15
        assert f[IDX["b_ptp"]] == pytest.approx(2 * a, rel=1e-12)
        assert f[IDX["spec_thd"]] < 1e-12
        assert f[IDX["b_zero_cross"]] == 2
        assert f[IDX["spec_fund"]] == pytest.approx(a, rel=1e-12)
        assert f[IDX["b_crest"]] == pytest.approx(np.sqrt(2), rel=1e-12)
        assert f[IDX["spec_entropy"]] == pytest.approx(0.0, abs=1e-12)

    def test_constant_fallbacks(self):
        f = extract_features(const(0.2))
        assert f[IDX["b_std"]] == 0.0
        assert f[IDX["b_skew"]] == 0.0 and f[IDX["b_kurt"]] == 0.0
        assert f[IDX["spec_entropy"]] == 0.0
        assert f[IDX["spec_fund"]] == 0.0
        assert np.all(np.isfinite(f))

    def test_zero_waveform_fallbacks(self):
        f = extract_features(const(0.0))
        assert f[IDX["b_crest"]] == 0.0 and f[IDX["b_form"]] == 0.0
        assert np.all(f == 0.0)

    @pytest.mark.parametrize("cls", ["sine", "triangular", "trapezoidal"])
    def test_scaling(self, cls):
        w = synth_waveform(cls, 0.1, 1e5, duty=0.3125, flat=0.0625)
        w2 = FluxWaveform(2 * w.values, w.frequency)
        f1, f2 = extract_features(w), extract_features(w2)
        for name in ("b_mean", "b_std", "b_min", "b_max", "b_ptp", "b_rms", "b_mean_abs", "b_iqr"):
            assert f2[IDX[name]] == pytest.approx(2 * f1[IDX[name]], rel=1e-12, abs=1e-15), name
        invariant = ["b_skew", "b_kurt", "b_crest", "b_form", "b_zero_cross", "spec_thd", "spec_entropy",
                     "spec_centroid", "dbdt_zero_cross", *(f"spec_h{k}_ratio" for k in range(2, 8))]
        for name in invariant:
            assert f2[IDX[name]] == pytest.approx(f1[IDX[name]], rel=1e-9, abs=1e-12), name

    @settings(max_examples=25)
    @given(st.integers(0, 2**31))
    def test_reversal_preserves_order_statistics(self, seed):
        b = np.random.default_rng(seed).normal(size=FLUX_LENGTH)
        f1 = extract_features(FluxWaveform(b, 1e5))
        f2 = extract_features(FluxWaveform(b[::-1].copy(), 1e5))
        for name in ("b_mean", "b_std", "b_min", "b_max", "b_ptp", "b_rms", "b_iqr"):
            assert f1[IDX[name]] == f2[IDX[name]], name

    @pytest.mark.parametrize("k", range(2, 8))
    def test_pure_harmonic_ratio(self, k):
        # Fundamental plus a k-th harmonic of equal magnitude.
        b = np.sin(2 * np.pi * PHASE) + np.sin(2 * np.pi * k * PHASE)
        f = extract_features(FluxWaveform(b, 1e5))
        for j in range(2, 8):
            ratio = f[IDX[f"spec_h{j}_ratio"]]
            if j == k:
                assert ratio == pytest.approx(1.0, rel=1e-12)
            else:
                assert ratio <= 1e-6

    def test_deterministic(self):
        w = synth_waveform("trapezoidal", 0.2, 3e5, duty=0.25, flat=0.125)
        np.testing.assert_array_equal(extract_features(w), extract_features(w))

    @settings(max_examples=25)
    @given(st.integers(0, 2**31))
    def test_finite_for_non_constant(self, seed):
        b = np.random.default_rng(seed).normal(size=FLUX_LENGTH)
        assert np.all(np.isfinite(extract_features(FluxWaveform(b, 1e5))))
