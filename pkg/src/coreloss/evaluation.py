"""Regression metrics, the validation-weighted hybrid blend and report tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_open
from .errors import DataError

HYBRID_GRID_STEPS = 10000
HISTOGRAM_BIN_WIDTH = 5.0
HISTOGRAM_CAP = 50.0
METRIC_COLUMNS = ("model", "n", "mse", "mape_pct", "max_ape_pct", "r2")


def _pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise DataError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    if y.size == 0:
        raise DataError("metrics need at least one sample")
    return y, y_hat


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def ape(y, y_hat) -> np.ndarray:
    """Per-sample absolute percentage errors."""
    y, y_hat = _pair(y, y_hat)
    if np.any(y == 0):
        raise DataError("percentage errors are undefined for zero targets")
    return np.abs(y - y_hat) / np.abs(y) * 100.0


def mape(y, y_hat) -> float:
    return float(np.mean(ape(y, y_hat)))


def max_ape(y, y_hat) -> float:
    return float(np.max(ape(y, y_hat)))


def r2(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if not ss_tot > 0:
        raise DataError("R^2 is undefined for a constant target")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


@dataclass
class MetricsReport:
    mse: float
    mape: float
    max_ape: float
    r2: float
    n: int
    ape: np.ndarray = field(repr=False)

    @classmethod
    def compute(cls, y, y_hat) -> MetricsReport:
        """All metrics at once; R^2 is NaN when the target is constant (e.g. one sample)."""
        errors = ape(y, y_hat)
        score = r2(y, y_hat) if np.ptp(np.asarray(y, dtype=np.float64)) > 0 else float("nan")
        return cls(mse(y, y_hat), float(errors.mean()), float(errors.max()), score, errors.size, errors)

    def row(self, name: str) -> dict:
        return {"model": name, "n": self.n, "mse": self.mse, "mape_pct": self.mape,
                "max_ape_pct": self.max_ape, "r2": self.r2}


@dataclass(frozen=True)
class HybridWeights:
    w1: float
    w2: float
    val_mse: float

    def blend(self, pred_a, pred_b) -> np.ndarray:
        return self.w1 * np.asarray(pred_a, dtype=np.float64) + self.w2 * np.asarray(pred_b, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"w1": self.w1, "w2": self.w2, "val_mse": self.val_mse}

    @classmethod
    def from_dict(cls, d) -> HybridWeights:
        return cls(float(d["w1"]), float(d["w2"]), float(d["val_mse"]))


def _blend_scores(w1, a, b, y) -> np.ndarray:
    scores = np.empty(w1.size)
    rows = max(1, (1 << 22) // max(y.size, 1))  # bounded memory for large validation sets
    for start in range(0, w1.size, rows):
        w = w1[start:start + rows, None]
        scores[start:start + rows] = np.mean((w * a + (1.0 - w) * b - y) ** 2, axis=1)
    return scores


def fit_hybrid_weights(pred_a, pred_b, y_val, steps: int = HYBRID_GRID_STEPS) -> HybridWeights:
    """Grid search w1 in {0, 1/steps, ..., 1}, w2 = 1 - w1, for the lowest blend MSE.

    The first (smallest) w1 attaining the minimum wins. The blend MSE is a
    quadratic in w1, so the grid is scanned through its coefficients and only
    the near-minimal points and both endpoints are rescored directly.
    """
    a, y = _pair(pred_a, y_val)
    b, _ = _pair(pred_b, y_val)
    w1 = np.arange(steps + 1) / steps
    d, e = a - b, b - y
    q2, q1, q0 = np.mean(d * d), np.mean(d * e), np.mean(e * e)
    approx = (q2 * w1 + 2.0 * q1) * w1 + q0
    slack = 1e-9 * (q2 + 2.0 * abs(q1) + q0) + 1e-300
    candidates = np.flatnonzero(approx <= approx.min() + slack)
    candidates = np.union1d(candidates, [0, steps])
    scores = _blend_scores(w1[candidates], a, b, y)
    best = candidates[int(np.argmin(scores))]
    return HybridWeights(float(w1[best]), float(1.0 - w1[best]), float(scores.min()))


def error_histogram(y, y_hat, bin_width: float = HISTOGRAM_BIN_WIDTH, cap: float = HISTOGRAM_CAP):
    """Counts of APE in [0, w), [w, 2w), ... up to ``cap``, plus an overflow bin.

    Returns ``(edges, counts)``; ``edges`` holds the lower bound of every bin and
    the last count is the overflow (APE >= cap).
    """
    if not bin_width > 0 or not cap > 0:
        raise DataError("bin width and cap must be positive")
    errors = ape(y, y_hat)
    n_bins = int(round(cap / bin_width))
    edges = np.arange(n_bins + 1) * bin_width
    idx = np.minimum(np.floor(errors / bin_width).astype(np.int64), n_bins)
    return edges, np.bincount(idx, minlength=n_bins + 1)


def write_metrics_csv(path, rows: list[dict]) -> None:
    with atomic_open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_histogram_csv(path, edges, counts, bin_width: float = HISTOGRAM_BIN_WIDTH) -> None:
    with atomic_open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low_pct", "bin_high_pct", "count"])
        for i, lo in enumerate(edges):
            hi = "inf" if i == len(edges) - 1 else repr(float(lo + bin_width))
            writer.writerow([repr(float(lo)), hi, int(counts[i])])


def write_residuals_csv(path, y, y_hat, materials=None, waveforms=None) -> None:
    y, y_hat = _pair(y, y_hat)
    errors = ape(y, y_hat)
    with atomic_open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "material", "waveform", "true_W_per_m3", "pred_W_per_m3", "residual", "ape_pct"])
        for i in range(y.size):
            writer.writerow([
                i,
                "" if materials is None else materials[i],
                "" if waveforms is None else waveforms[i],
                repr(float(y[i])), repr(float(y_hat[i])), repr(float(y_hat[i] - y[i])), repr(float(errors[i])),
            ])  # fmt: skip
