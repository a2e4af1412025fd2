"""Steinmetz (SE) and improved generalized Steinmetz (iGSE) core-loss models."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from .errors import DataError, DegenerateWaveformWarning, FitWarning, NumericalError
from .waveform import FLUX_LENGTH, FluxWaveform, delta_b

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
KI_QUADRATURE_INTERVALS = 16384


@dataclass(frozen=True)
class SteinmetzCoeffs:
    k: float
    a: float
    b: float
    material: str | None = None

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise DataError(f"Steinmetz k must be positive and finite, got {self.k}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise DataError("Steinmetz exponents must be finite")

    @property
    def typical(self) -> bool:
        """Whether the exponents fall in the usual ferrite range."""
        return 1.0 <= self.a <= 2.0 and 2.0 <= self.b <= 3.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.k, self.a, self.b)


def se_predict(c: SteinmetzCoeffs, f, b_max):
    """P = k * f**a * b_max**b in W/m^3. Accepts scalars or arrays."""
    f = np.asarray(f, dtype=np.float64)
    b_max = np.asarray(b_max, dtype=np.float64)
    if np.any(f <= 0) or np.any(b_max <= 0):
        raise DataError("frequency and B_max must be positive")
    out = c.k * f**c.a * b_max**c.b
    return float(out) if out.ndim == 0 else out


def _log_design(f, b_max):
    f = np.asarray(f, dtype=np.float64)
    b_max = np.asarray(b_max, dtype=np.float64)
    if np.any(f <= 0) or np.any(b_max <= 0):
        raise DataError("frequency and B_max must be positive")
    return np.column_stack([np.ones_like(f), np.log(f), np.log(b_max)])


def _check_identifiable(X: np.ndarray) -> None:
    if X.shape[0] < 3:
        raise NumericalError(f"SE fit needs at least 3 samples, got {X.shape[0]}")
    if np.linalg.matrix_rank(X) < 3:
        problems = []
        if np.ptp(X[:, 1]) == 0:
            problems.append("all frequencies are equal")
        if np.ptp(X[:, 2]) == 0:
            problems.append("all B_max values are equal")
        if not problems:
            problems.append("log f and log B_max are collinear")
        raise NumericalError("SE fit is rank deficient: " + ", ".join(problems))


def se_fit(f, b_max, loss, *, refine: bool = False, material: str | None = None) -> SteinmetzCoeffs:
    """Fit (k, a, b) by linear least squares on log P = log k + a log f + b log B_max.

    With ``refine`` the log-domain solution seeds a Gauss-Newton pass that
    minimizes squared relative error instead.
    """
    X = _log_design(f, b_max)
    y = np.asarray(loss, dtype=np.float64)
    if np.any(y <= 0):
        raise DataError("losses must be positive for a log-domain fit")
    _check_identifiable(X)
    theta, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
    if refine:
        theta = _gauss_newton_relative(X, y, theta)
    return SteinmetzCoeffs(math.exp(theta[0]), float(theta[1]), float(theta[2]), material)


def _gauss_newton_relative(X, y, theta, max_iter=50):
    def cost(t):
        return np.sum((np.exp(X @ t) / y - 1.0) ** 2)

    current = cost(theta)
    for _ in range(max_iter):
        ratio = np.exp(X @ theta) / y
        J = ratio[:, None] * X
        step, *_ = np.linalg.lstsq(J, -(ratio - 1.0), rcond=None)
        scale = 1.0
        while scale > 1e-6:
            trial = theta + scale * step
            trial_cost = cost(trial)
            if trial_cost <= current:
                break
            scale *= 0.5
        else:
            break
        theta, previous, current = trial, current, trial_cost
        if np.max(np.abs(scale * step)) < 1e-12 or previous - current <= 1e-15 * previous:
            break
    return theta


def _simpson(values: np.ndarray, h: float) -> float:
    n = values.size - 1
    if n % 2:
        raise ValueError("Simpson's rule needs an even number of intervals")
    return h / 3.0 * (values[0] + values[-1] + 4.0 * values[1:-1:2].sum() + 2.0 * values[2:-1:2].sum())


@lru_cache(maxsize=4096)
def cos_power_integral(a: float, intervals: int = KI_QUADRATURE_INTERVALS) -> float:
    """Integral of |cos(theta)|**a over [0, 2*pi] by composite Simpson.

    Integrated over one quarter period and multiplied by four, which puts the
    zeros of cos on the interval ends where the integrand is least smooth.
    """
    theta = np.linspace(0.0, math.pi / 2.0, intervals + 1)
    values = np.cos(theta) ** a
    return 4.0 * _simpson(values, (math.pi / 2.0) / intervals)


def cos_power_integral_closed_form(a: float) -> float:
    return 2.0 * math.sqrt(math.pi) * math.exp(gammaln((a + 1.0) / 2.0) - gammaln(a / 2.0 + 1.0))


def ki_compute(c: SteinmetzCoeffs) -> float:
    integral = cos_power_integral(float(c.a))
    return c.k / (TWO_PI ** (c.a - 1.0) * 2.0 ** (c.b - c.a) * integral)


@dataclass(frozen=True)
class IgseModel:
    coeffs: SteinmetzCoeffs
    ki: float = field(init=False)
    converged: bool = True
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ki", float(ki_compute(self.coeffs)))


def _mean_abs_slope_power(flux: np.ndarray, a: float) -> np.ndarray:
    # Per-row mean of |B[n+1]-B[n]|**a over the closed period.
    steps = np.abs(np.roll(flux, -1, axis=-1) - flux)
    return np.mean(steps**a, axis=-1)


def igse_predict_batch(m: IgseModel, flux, frequency) -> np.ndarray:
    """Vectorized iGSE over rows of ``flux`` (n x 1024)."""
    flux = np.atleast_2d(np.asarray(flux, dtype=np.float64))
    f = np.asarray(frequency, dtype=np.float64).reshape(-1)
    c = m.coeffs
    swing = np.ptp(flux, axis=-1)
    slope_term = _mean_abs_slope_power(flux, c.a) * (flux.shape[-1] * f) ** c.a
    out = np.zeros(flux.shape[0])
    ok = swing > 0
    out[ok] = m.ki * swing[ok] ** (c.b - c.a) * slope_term[ok]
    if not np.all(ok):
        warnings.warn(f"{np.count_nonzero(~ok)} waveform(s) without flux swing predicted as 0",
                      DegenerateWaveformWarning, stacklevel=2)
    return out


def igse_predict(m: IgseModel, w: FluxWaveform) -> float:
    """iGSE loss of one waveform.

    The time integral of |dB/dt|**a uses the slopes of the sampled period's
    linear interpolant, so it is exact for triangles and trapezoids.
    """
    if delta_b(w) == 0.0:
        warnings.warn("waveform has no flux swing; iGSE loss is 0", DegenerateWaveformWarning, stacklevel=2)
        return 0.0
    c = m.coeffs
    slope_term = _mean_abs_slope_power(w.values, c.a) * (FLUX_LENGTH * w.frequency) ** c.a
    return float(m.ki * delta_b(w) ** (c.b - c.a) * slope_term)


def igse_analytic(c: SteinmetzCoeffs, waveform_class: str, amplitude: float, frequency: float,
                  duty: float = 0.5, flat: float = 0.0) -> float:
    """iGSE evaluated in closed form on the ideal continuous waveform.

    Same parameterization as ``waveform.synth_waveform``; used as the planted
    loss law of the synthetic generator.
    """
    swing = 2.0 * amplitude
    if waveform_class == "sine":
        # (1/T) * integral of |dB/dt|^a over a period, for B = A sin(2 pi f t).
        mean_slope_power = (TWO_PI * frequency * amplitude) ** c.a * cos_power_integral_closed_form(c.a) / TWO_PI
    elif waveform_class in ("triangular", "trapezoidal"):
        rise = duty
        fall = 1.0 - duty - (2.0 * flat if waveform_class == "trapezoidal" else 0.0)
        mean_slope_power = sum(frac * (swing * frequency / frac) ** c.a for frac in (rise, fall))
    else:
        raise DataError(f"unknown waveform class {waveform_class!r}")
    integral = cos_power_integral_closed_form(c.a)
    ki = c.k / (TWO_PI ** (c.a - 1.0) * 2.0 ** (c.b - c.a) * integral)
    return ki * swing ** (c.b - c.a) * mean_slope_power


def _log_ki(log_k, a, b):
    return log_k - (a - 1.0) * math.log(TWO_PI) - (b - a) * math.log(2.0) - math.log(cos_power_integral(a))


def igse_fit(
    flux,
    frequency,
    loss,
    *,
    waveform_class=None,
    material: str | None = None,
    max_iter: int = 2000,
    xatol: float = 1e-8,
) -> IgseModel:
    """Fit (k, a, b) of the iGSE by Nelder-Mead on mean squared log error.

    The simplex starts from an SE fit: on the sine rows when
    ``waveform_class`` identifies enough of them, otherwise on all rows with
    B_max taken as half the swing. Non-convergence and unidentifiable data are
    reported through the ``converged``/``degenerate`` flags plus a ``FitWarning``.
    """
    flux = np.atleast_2d(np.asarray(flux, dtype=np.float64))
    f = np.asarray(frequency, dtype=np.float64).reshape(-1)
    y = np.asarray(loss, dtype=np.float64).reshape(-1)
    if flux.shape[0] < 3:
        raise NumericalError(f"iGSE fit needs at least 3 samples, got {flux.shape[0]}")
    if np.any(y <= 0) or np.any(f <= 0):
        raise DataError("losses and frequencies must be positive")
    swing = np.ptp(flux, axis=-1)
    if np.any(swing <= 0):
        raise DataError("every waveform must have a non-zero flux swing")

    steps = np.abs(np.roll(flux, -1, axis=-1) - flux)
    with np.errstate(divide="ignore"):
        log_steps = np.log(steps)
    log_swing = np.log(swing)
    log_nf = np.log(flux.shape[-1] * f)
    log_y = np.log(y)

    def objective(theta):
        log_k, a, b = theta
        if not (0.05 < a < 10.0 and -10.0 < b < 20.0):
            return 1e6
        log_mean = np.log(np.mean(np.exp(a * log_steps), axis=-1))
        pred = _log_ki(log_k, a, b) + (b - a) * log_swing + a * log_nf + log_mean
        return float(np.mean((pred - log_y) ** 2))

    degenerate = False
    init = None
    if waveform_class is not None:
        sine = np.asarray(waveform_class) == "sine"
        try:
            c0 = se_fit(f[sine], np.max(flux[sine], axis=-1), y[sine])
            init = (math.log(c0.k), c0.a, c0.b)
        except (NumericalError, DataError):
            init = None
    if init is None:
        try:
            c0 = se_fit(f, swing / 2.0, y)
            init = (math.log(c0.k), c0.a, c0.b)
        except NumericalError as exc:
            degenerate = True
            log.warning("iGSE fit has no usable SE starting point: %s", exc)
            init = (float(np.mean(log_y - 1.5 * log_nf - 2.5 * log_swing)), 1.5, 2.5)

    res = minimize(
        objective,
        np.asarray(init, dtype=np.float64),
        method="Nelder-Mead",
        options={"xatol": xatol, "fatol": 1e-14, "maxiter": max_iter, "maxfev": 4 * max_iter},
    )
    log_k, a, b = res.x
    converged = bool(res.success)
    if degenerate or not converged:
        reason = "data cannot identify (k, a, b)" if degenerate else f"no convergence: {res.message}"
        warnings.warn(f"iGSE fit flagged: {reason}", FitWarning, stacklevel=2)
    return IgseModel(SteinmetzCoeffs(math.exp(log_k), float(a), float(b), material),
                     converged=converged, degenerate=degenerate)
