import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coreloss.errors import DataError
from coreloss.evaluation import (
    HybridWeights,
    MetricsReport,
    error_histogram,
    fit_hybrid_weights,
    mape,
    max_ape,
    mse,
    r2,
    read_metrics_csv,
    write_histogram_csv,
    write_metrics_csv,
    write_residuals_csv,
)

positive = arrays(np.float64, st.integers(2, 40), elements=st.floats(0.1, 1e4))


class TestMape:
    def test_hand_case(self):
        assert mape([100, 200], [110, 180]) == 10.0

    def test_perfect(self):
        assert mape([3.0, 7.0], [3.0, 7.0]) == 0.0

    def test_double(self):
        assert mape([1.0, 5.0, 9.0], [2.0, 10.0, 18.0]) == 100.0

    def test_zero_truth(self):
        with pytest.raises(DataError):
            mape([0.0, 1.0], [1.0, 1.0])

    @settings(max_examples=50)
    @given(positive, st.floats(1e-3, 1e3), st.integers(0, 2**31))
    def test_scale_invariant(self, y, lam, seed):
        y_hat = y * np.random.default_rng(seed).uniform(0.5, 1.5, y.size)
        assert mape(lam * y, lam * y_hat) == pytest.approx(mape(y, y_hat), rel=1e-10, abs=1e-12)

    def test_max_ape(self):
        assert max_ape([100, 200], [110, 180]) == 10.0
        assert max_ape([100, 200], [100, 100]) == 50.0


class TestR2:
    def test_perfect(self):
        assert r2([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) == 1.0

    def test_mean_predictor(self):
        y = np.array([1.0, 2.0, 6.0])
        assert r2(y, np.full(3, y.mean())) == 0.0

    def test_negative_allowed(self):
        assert r2([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == -3.0

    def test_constant_target(self):
        with pytest.raises(DataError):
            r2([2.0, 2.0], [1.0, 3.0])

    @settings(max_examples=50)
    @given(positive, st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 2**31))
    def test_affine_invariant(self, y, a, b, seed):
        if np.ptp(y) < 1e-6 * np.max(y):
            return
        y_hat = y + np.random.default_rng(seed).normal(size=y.size)
        assert r2(a * y + b, a * y_hat + b) == pytest.approx(r2(y, y_hat), rel=1e-7, abs=1e-9)


class TestMse:
    def test_values(self):
        assert mse([1, 2], [1, 2]) == 0.0
        assert mse([0], [3]) == 9.0

    def test_permutation(self):
        rng = np.random.default_rng(0)
        y, y_hat = rng.normal(size=30), rng.normal(size=30)
        p = rng.permutation(30)
        assert mse(y[p], y_hat[p]) == pytest.approx(mse(y, y_hat), rel=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            mse([1, 2], [1])

    def test_empty(self):
        with pytest.raises(DataError):
            mse([], [])


class TestReport:
    def test_oracle(self):
        y = np.array([1.0, 4.0, 9.0])
        rep = MetricsReport.compute(y, y)
        assert (rep.mse, rep.mape, rep.max_ape, rep.r2, rep.n) == (0.0, 0.0, 0.0, 1.0, 3)

    @given(positive, st.integers(0, 2**31))
    def test_invariants(self, y, seed):
        y_hat = y * np.random.default_rng(seed).uniform(0.2, 2.0, y.size)
        rep = MetricsReport.compute(y, y_hat)
        assert rep.max_ape >= rep.mape >= 0
        assert rep.r2 <= 1.0 or (np.ptp(y) == 0 and np.isnan(rep.r2))
        assert rep.ape.shape == y.shape

    def test_constant_target_reports_nan(self):
        rep = MetricsReport.compute([5.0], [4.0])
        assert np.isnan(rep.r2) and rep.mape == 20.0

    def test_row(self):
        row = MetricsReport.compute([1.0, 2.0], [1.0, 3.0]).row("m")
        assert row == {"model": "m", "n": 2, "mse": 0.5, "mape_pct": 25.0, "max_ape_pct": 50.0, "r2": -1.0}


class TestHybrid:
    def test_first_is_exact(self):
        y = np.array([1.0, 3.0, 2.0])
        w = fit_hybrid_weights(y, y + 1.0, y)
        assert (w.w1, w.w2, w.val_mse) == (1.0, 0.0, 0.0)

    def test_identical_predictors(self):
        y = np.array([1.0, 3.0, 2.0])
        p = np.array([2.0, 2.0, 2.0])
        assert fit_hybrid_weights(p, p, y).w1 == 0.0

    def test_symmetric_offsets(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=20)
        eps = rng.normal(size=20)
        w = fit_hybrid_weights(y + eps, y - eps, y)
        assert w.w1 == 0.5 and w.w2 == 0.5
        assert w.val_mse == pytest.approx(0.0, abs=1e-28)

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(1)
        w = fit_hybrid_weights(rng.normal(size=9), rng.normal(size=9), rng.normal(size=9))
        assert w.w1 + w.w2 == 1.0
        assert 0.0 <= w.w1 <= 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 60))
    def test_dominance(self, seed, n):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=n)
        a, b = y + rng.normal(size=n), y + rng.normal(scale=2, size=n)
        w = fit_hybrid_weights(a, b, y)
        assert w.val_mse <= min(mse(y, a), mse(y, b)) + 1e-15
        assert w.val_mse == pytest.approx(mse(y, w.blend(a, b)), rel=1e-9, abs=1e-15)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_fine_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=30)
        a, b = y + rng.normal(size=30), y + rng.normal(size=30)
        coarse = fit_hybrid_weights(a, b, y)
        fine_grid = np.arange(100001) / 100000
        resid = fine_grid[:, None] * a + (1 - fine_grid)[:, None] * b - y
        fine = fine_grid[int(np.argmin(np.mean(resid**2, axis=1)))]
        assert abs(coarse.w1 - fine) <= 1e-4 + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 80))
    def test_matches_exhaustive_grid(self, seed, n):
        rng = np.random.default_rng(seed)
        y = rng.lognormal(5, 1, n)
        a, b = y * rng.lognormal(0, 0.3, n), y * rng.lognormal(0.1, 0.3, n)
        grid = np.arange(10001) / 10000
        scores = np.array([np.mean((w * a + (1 - w) * b - y) ** 2) for w in grid])
        w = fit_hybrid_weights(a, b, y)
        assert w.val_mse == scores.min()
        assert w.w1 == grid[int(np.argmin(scores))]

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            fit_hybrid_weights([1.0, 2.0], [1.0], [1.0, 2.0])

    def test_round_trip(self):
        w = HybridWeights(0.4764, 0.5236, 1.5)
        assert HybridWeights.from_dict(w.to_dict()) == w


class TestHistogram:
    def test_perfect(self):
        edges, counts = error_histogram([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert counts[0] == 3 and counts[1:].sum() == 0
        assert len(edges) == len(counts) == 11
        np.testing.assert_array_equal(edges, np.arange(0, 55, 5))

    def test_seven_percent(self):
        _, counts = error_histogram([100.0], [107.0])
        assert counts[1] == 1 and counts.sum() == 1

    def test_overflow(self):
        _, counts = error_histogram([1.0, 1.0], [1.5, 3.0])
        assert counts[-1] == 2

    @given(positive, st.integers(0, 2**31))
    def test_partition(self, y, seed):
        y_hat = y * np.random.default_rng(seed).uniform(0, 3, y.size)
        _, counts = error_histogram(y, y_hat)
        assert counts.sum() == y.size

    def test_zero_truth(self):
        with pytest.raises(DataError):
            error_histogram([0.0], [1.0])


class TestCsvOutputs:
    def test_metrics_round_trip(self, tmp_path):
        rows = [MetricsReport.compute([1.0, 2.0, 4.0], [1.1, 2.0, 3.5]).row("gbt")]
        path = tmp_path / "m.csv"
        write_metrics_csv(path, rows)
        back = read_metrics_csv(path)
        assert back[0]["model"] == "gbt"
        assert float(back[0]["mape_pct"]) == rows[0]["mape_pct"]
        assert list(back[0]) == ["model", "n", "mse", "mape_pct", "max_ape_pct", "r2"]

    def test_histogram_csv(self, tmp_path):
        edges, counts = error_histogram([100.0, 100.0], [107.0, 190.0])
        path = tmp_path / "h.csv"
        write_histogram_csv(path, edges, counts)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["bin_low_pct", "bin_high_pct", "count"]
        assert rows[2] == ["5.0", "10.0", "1"]
        assert rows[-1] == ["50.0", "inf", "1"]

    def test_residuals_csv(self, tmp_path):
        path = tmp_path / "r.csv"
        write_residuals_csv(path, [2.0, 4.0], [3.0, 4.0], ["N87", "77"], ["sine", "sine"])
        rows = list(csv.DictReader(open(path)))
        assert rows[0]["residual"] == "1.0" and rows[0]["ape_pct"] == "50.0"
        assert rows[1]["material"] == "77"
