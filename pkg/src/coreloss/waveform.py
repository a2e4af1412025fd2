"""Flux-density waveforms: synthesis, calculus helpers and sequence features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

FLUX_LENGTH = 1024
WAVEFORM_CLASSES = ("sine", "triangular", "trapezoidal")

# Bumped whenever the feature list below changes; it feeds the model-file checksum.
FEATURE_SET_VERSION = "seqfeat-v1"

_MOMENT_NAMES = ("mean", "std", "min", "max", "ptp", "rms", "mean_abs", "skew", "kurt")
FEATURE_NAMES: tuple[str, ...] = (
    *(f"b_{name}" for name in _MOMENT_NAMES),
    "b_crest",
    "b_form",
    "b_zero_cross",
    "b_iqr",
    *(f"dbdt_{name}" for name in _MOMENT_NAMES),
    "dbdt_zero_cross",
    "spec_fund",
    *(f"spec_h{k}_ratio" for k in range(2, 8)),
    "spec_thd",
    "spec_centroid",
    "spec_entropy",
)
assert len(FEATURE_NAMES) == 33

_SPECTRAL_BINS = 64
_THD_HARMONICS = 20


@dataclass(frozen=True)
class FluxWaveform:
    """One period of flux density (Tesla) sampled at ``FLUX_LENGTH`` points."""

    values: np.ndarray
    frequency: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (FLUX_LENGTH,):
            raise DataError(f"flux must have {FLUX_LENGTH} samples, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("flux contains non-finite values")
        if not (self.frequency > 0 and np.isfinite(self.frequency)):
            raise DataError(f"frequency must be positive, got {self.frequency}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "frequency", float(self.frequency))

    @property
    def dt(self) -> float:
        return 1.0 / (FLUX_LENGTH * self.frequency)

    @property
    def period(self) -> float:
        return 1.0 / self.frequency


def _phase() -> np.ndarray:
    return np.arange(FLUX_LENGTH) / FLUX_LENGTH


def _piecewise_linear(phase, knots, levels):
    # np.interp with the first knot repeated one period later closes the loop.
    return np.interp(phase, np.append(knots, 1.0), np.append(levels, levels[0]))


def synth_waveform(
    waveform_class: str,
    amplitude: float,
    frequency: float,
    duty: float = 0.5,
    flat: float = 0.0,
) -> FluxWaveform:
    """Build an ideal zero-mean waveform with peak value ``amplitude``.

    ``duty`` is the rising fraction of the period for triangular and
    trapezoidal waves. ``flat`` is the trapezoid's dwell fraction, spent once at
    the top and once at the bottom, so the falling edge takes ``1 - duty - 2*flat``.
    Vertices sit on sample instants: the wave starts at ``-amplitude`` (sine at 0).
    """
    if not amplitude > 0:
        raise DataError(f"amplitude must be positive, got {amplitude}")
    if not frequency > 0:
        raise DataError(f"frequency must be positive, got {frequency}")
    t = _phase()
    if waveform_class == "sine":
        values = amplitude * np.sin(2.0 * np.pi * t)
    elif waveform_class in ("triangular", "trapezoidal"):
        if waveform_class == "triangular":
            flat = 0.0
        if not 0.0 < duty < 1.0:
            raise DataError(f"duty must lie in (0, 1), got {duty}")
        if flat < 0.0 or duty + 2.0 * flat >= 1.0:
            raise DataError(f"rise {duty} plus two dwells of {flat} must leave a falling edge")
        knots = np.array([0.0, duty, duty + flat, 1.0 - flat])
        levels = amplitude * np.array([-1.0, 1.0, 1.0, -1.0])
        if flat == 0.0:
            knots, levels = knots[:2], levels[:2]
        values = _piecewise_linear(t, knots, levels)
    else:
        raise DataError(f"unknown waveform class {waveform_class!r}")
    return FluxWaveform(values, frequency)


def b_max(w: FluxWaveform) -> float:
    """Peak flux density, taken as max(B) of the waveform."""
    return float(np.max(w.values))


def delta_b(w: FluxWaveform) -> float:
    """Peak-to-peak flux density over the period."""
    return float(np.max(w.values) - np.min(w.values))


def derivative(w: FluxWaveform) -> np.ndarray:
    """dB/dt in T/s by central differences with periodic wrap-around."""
    b = w.values
    return (np.roll(b, -1) - np.roll(b, 1)) / (2.0 * w.dt)


def segment_slopes(w: FluxWaveform) -> np.ndarray:
    """Slope of each sample-to-sample segment of the periodic linear interpolant.

    Exact for piecewise-linear waves whose vertices fall on samples, which the
    iGSE time integral relies on.
    """
    b = w.values
    return (np.roll(b, -1) - b) / w.dt


def _zero_crossings(x: np.ndarray) -> int:
    positive = x >= 0.0
    return int(np.count_nonzero(positive != np.roll(positive, 1)))


def _moments(x: np.ndarray) -> tuple[float, ...]:
    # Sorting first makes every sum independent of the time order of samples.
    s = np.sort(x)
    mean = s[0] if s[0] == s[-1] else s.mean()  # exact for constants, where summation rounds
    centered = s - mean
    m2 = np.mean(centered**2)
    scale = np.max(np.abs(s))
    if m2 > (1e-12 * scale) ** 2:
        skew = np.mean(centered**3) / m2**1.5
        kurt = np.mean(centered**4) / m2**2 - 3.0
    else:
        skew = kurt = 0.0
    rms = np.sqrt(np.mean(s**2))
    return (
        mean,
        np.sqrt(m2),
        s[0],
        s[-1],
        s[-1] - s[0],
        rms,
        np.mean(np.abs(s)),
        skew,
        kurt,
    )


def _spectral(b: np.ndarray) -> list[float]:
    mag = np.abs(np.fft.rfft(b)) * (2.0 / b.size)
    # Roundoff leakage (e.g. from a DC offset) would otherwise pose as content.
    mag[mag <= 1e-12 * np.max(mag)] = 0.0
    fund = mag[1]
    if fund > 0.0:
        ratios = list(mag[2:8] / fund)
        thd = np.sqrt(np.sum(mag[2 : _THD_HARMONICS + 1] ** 2)) / fund
    else:
        ratios = [0.0] * 6
        thd = 0.0
    band = mag[1 : _SPECTRAL_BINS + 1]
    total = band.sum()
    if total > 0.0:
        bins = np.arange(1, _SPECTRAL_BINS + 1)
        centroid = np.sum(bins * band) / total
        power = band**2 / np.sum(band**2)
        nz = power[power > 0.0]
        entropy = 0.0 - np.sum(nz * np.log(nz)) / np.log(_SPECTRAL_BINS)
    else:
        centroid = entropy = 0.0
    return [fund, *ratios, thd, centroid, entropy]


def extract_features(w: FluxWaveform) -> np.ndarray:
    """The 33 sequence features, ordered as ``FEATURE_NAMES``."""
    b = w.values
    mean, std, lo, hi, ptp, rms, mean_abs, skew, kurt = _moments(b)
    crest = np.max(np.abs(b)) / rms if rms > 0 else 0.0
    form = rms / mean_abs if mean_abs > 0 else 0.0
    iqr = np.percentile(b, 75) - np.percentile(b, 25)
    dbdt = derivative(w)
    features = [
        mean, std, lo, hi, ptp, rms, mean_abs, skew, kurt,
        crest, form, _zero_crossings(b - mean), iqr,
        *_moments(dbdt), _zero_crossings(dbdt),
        *_spectral(b),
    ]  # fmt: skip
    return np.asarray(features, dtype=np.float64)


def feature_matrix(waveforms) -> np.ndarray:
    return np.vstack([extract_features(w) for w in waveforms])
