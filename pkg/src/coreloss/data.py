"""Samples, datasets, CSV ingestion, splitting, standardization and synthesis."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_open, atomic_write_text
from .empirical import SteinmetzCoeffs, igse_analytic
from .errors import DataError
from .waveform import FLUX_LENGTH, WAVEFORM_CLASSES, FluxWaveform, synth_waveform

log = logging.getLogger(__name__)

TEMPERATURE_RANGE = (-60.0, 200.0)
FLUX_COLUMNS = tuple(f"b_{i:04d}" for i in range(FLUX_LENGTH))
SCALAR_COLUMNS = ("material", "waveform", "temperature_C", "frequency_Hz", "core_loss_W_per_m3")
CSV_HEADER = (*SCALAR_COLUMNS, *FLUX_COLUMNS)
SPLIT_FORMAT = "coreloss-split"
SPLIT_VERSION = 1

# Steinmetz coefficients fitted on sinusoidal data, one row per material.
TABLE_SE_COEFFS = {
    "3C94": (1.500, 1.430, 2.471),
    "77": (0.561, 1.513, 2.321),
    "N27": (0.971, 1.490, 2.390),
    "N87": (0.400, 1.578, 2.453),
}


@dataclass(frozen=True)
class Sample:
    material: str
    waveform_class: str
    temperature: float
    frequency: float
    flux: np.ndarray
    loss: float | None

    @property
    def waveform(self) -> FluxWaveform:
        return FluxWaveform(self.flux, self.frequency)


def _first_appearance(values: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(values))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of samples.

    ``loss`` may be all-NaN for unlabeled prediction inputs; labeled datasets
    (``labeled``) carry strictly positive losses.
    """

    materials: tuple[str, ...]
    waveform_classes: tuple[str, ...]
    temperature: np.ndarray
    frequency: np.ndarray
    flux: np.ndarray
    loss: np.ndarray
    provenance: str = "ingested"
    rng_seed: int | None = None
    _index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.materials)
        arrays = {}
        for name in ("temperature", "frequency", "loss"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape != (n,):
                raise DataError(f"{name} has {arr.size} entries for {n} samples")
            arrays[name] = arr
        flux = np.asarray(self.flux, dtype=np.float64)
        if n == 0:
            flux = flux.reshape(0, FLUX_LENGTH)
        if flux.shape != (n, FLUX_LENGTH):
            raise DataError(f"flux block has shape {flux.shape}, expected ({n}, {FLUX_LENGTH})")
        arrays["flux"] = flux
        if len(self.waveform_classes) != n:
            raise DataError("waveform column length differs from material column")
        if self.provenance not in ("ingested", "synthetic"):
            raise DataError(f"unknown provenance {self.provenance!r}")
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "materials", tuple(str(m) for m in self.materials))
        object.__setattr__(self, "waveform_classes", tuple(str(w) for w in self.waveform_classes))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], provenance="ingested", rng_seed=None) -> Dataset:
        loss = [np.nan if s.loss is None else s.loss for s in samples]
        flux = np.array([s.flux for s in samples], dtype=np.float64).reshape(len(samples), -1)
        return cls(
            tuple(s.material for s in samples),
            tuple(s.waveform_class for s in samples),
            np.array([s.temperature for s in samples]),
            np.array([s.frequency for s in samples]),
            flux,
            np.array(loss, dtype=np.float64),
            provenance,
            rng_seed,
        )

    def __len__(self) -> int:
        return len(self.materials)

    def __getitem__(self, i: int) -> Sample:
        loss = self.loss[i]
        return Sample(
            self.materials[i],
            self.waveform_classes[i],
            float(self.temperature[i]),
            float(self.frequency[i]),
            self.flux[i],
            None if math.isnan(loss) else float(loss),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def labeled(self) -> bool:
        return len(self) > 0 and bool(np.all(self.loss > 0))

    @property
    def material_vocab(self) -> tuple[str, ...]:
        return _first_appearance(self.materials)

    @property
    def waveform_vocab(self) -> tuple[str, ...]:
        return _first_appearance(self.waveform_classes)

    @property
    def origin_index(self) -> np.ndarray:
        """Row positions in the dataset this one was taken from."""
        return np.arange(len(self)) if self._index is None else self._index

    def waveforms(self) -> list[FluxWaveform]:
        return [FluxWaveform(b, f) for b, f in zip(self.flux, self.frequency)]

    def take(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            tuple(self.materials[i] for i in idx),
            tuple(self.waveform_classes[i] for i in idx),
            self.temperature[idx],
            self.frequency[idx],
            self.flux[idx],
            self.loss[idx],
            self.provenance,
            self.rng_seed,
            self.origin_index[idx],
        )

    def where(self, mask) -> Dataset:
        return self.take(np.flatnonzero(np.asarray(mask, dtype=bool)))

    def channel(self, name: str) -> np.ndarray:
        """Scalar channel values by name, for standardization."""
        if name == "temperature":
            return self.temperature
        if name == "frequency":
            return self.frequency
        if name == "flux":
            return self.flux.reshape(-1)
        if name == "log_loss":
            return np.log(self.loss)
        raise DataError(f"unknown channel {name!r}")


# -- CSV -------------------------------------------------------------------------------


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}, column {column!r}: non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"line {line}, column {column!r}: non-finite value {text!r}")
    return value


def load_csv(path, *, require_loss: bool = True) -> Dataset:
    """Read a dataset CSV; errors name the offending line and column.

    With ``require_loss=False`` the loss column may be absent or empty, which
    is how prediction inputs are supplied.
    """
    path = Path(path)
    materials, waves, temps, freqs, losses, flux_rows = [], [], [], [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header required") from None
        header = [h.strip() for h in header]
        has_loss = "core_loss_W_per_m3" in header
        expected = list(CSV_HEADER) if (has_loss or require_loss) else [c for c in CSV_HEADER if c != "core_loss_W_per_m3"]
        missing = [c for c in expected if c not in header]
        if missing:
            shown = ", ".join(missing[:5]) + (" ..." if len(missing) > 5 else "")
            raise DataError(f"{path}: missing column(s): {shown}")
        if header != expected:
            raise DataError(f"{path}: columns must appear in the order {expected[:6]}...")
        n_fields = len(header)
        flux_start = header.index(FLUX_COLUMNS[0])
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_fields:
                got = len(row) - flux_start
                raise DataError(
                    f"line {line_no}: {len(row)} fields, expected {n_fields} "
                    f"(flux length {got} != {FLUX_LENGTH})"
                )
            material, wave = row[0].strip(), row[1].strip()
            if not material:
                raise DataError(f"line {line_no}, column 'material': empty value")
            if wave not in WAVEFORM_CLASSES:
                raise DataError(f"line {line_no}, column 'waveform': {wave!r} not in {WAVEFORM_CLASSES}")
            temp = _parse_float(row[2], line_no, "temperature_C")
            if not TEMPERATURE_RANGE[0] <= temp <= TEMPERATURE_RANGE[1]:
                raise DataError(f"line {line_no}, column 'temperature_C': {temp} outside {TEMPERATURE_RANGE}")
            freq = _parse_float(row[3], line_no, "frequency_Hz")
            if freq <= 0:
                raise DataError(f"line {line_no}, column 'frequency_Hz': must be positive, got {freq}")
            if has_loss and (require_loss or row[4].strip()):
                loss = _parse_float(row[4], line_no, "core_loss_W_per_m3")
                if loss <= 0:
                    raise DataError(f"line {line_no}, column 'core_loss_W_per_m3': must be positive, got {loss}")
            else:
                loss = math.nan
            try:
                flux = np.array(row[flux_start:], dtype=np.float64)
            except ValueError:
                for j, text in enumerate(row[flux_start:]):
                    _parse_float(text, line_no, FLUX_COLUMNS[j])
                raise
            if not np.all(np.isfinite(flux)):
                j = int(np.flatnonzero(~np.isfinite(flux))[0])
                raise DataError(f"line {line_no}, column {FLUX_COLUMNS[j]!r}: non-finite value")
            materials.append(material)
            waves.append(wave)
            temps.append(temp)
            freqs.append(freq)
            losses.append(loss)
            flux_rows.append(flux)
    flux = np.array(flux_rows).reshape(len(flux_rows), FLUX_LENGTH)
    return Dataset(tuple(materials), tuple(waves), np.array(temps), np.array(freqs), flux, np.array(losses))


def save_csv(ds: Dataset, path) -> None:
    """Write ``ds`` in the ingestion schema; floats use shortest round-trip repr."""
    with atomic_open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i in range(len(ds)):
            loss = ds.loss[i]
            writer.writerow([
                ds.materials[i],
                ds.waveform_classes[i],
                repr(float(ds.temperature[i])),
                repr(float(ds.frequency[i])),
                "" if math.isnan(loss) else repr(float(loss)),
                *map(repr, ds.flux[i].tolist()),
            ])


# -- splitting -------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    validation: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fractions = (self.train, self.validation, self.test)
        if any(not f > 0 for f in fractions):
            raise DataError(f"split fractions must be positive, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-12:
            raise DataError(f"split fractions must sum to 1, got {sum(fractions)!r}")


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    # The epsilon keeps e.g. 0.15 * 100 = 15.000000000000002 from tipping either way.
    n_val = int(math.floor(n * spec.validation + 1e-9))
    n_test = int(math.floor(n * spec.test + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n <= 0:
        raise DataError("cannot split an empty dataset")
    n_train, n_val, _ = split_sizes(n, spec)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic train/validation/test partition; flooring remainder goes to train."""
    return tuple(ds.take(idx) for idx in split_indices(len(ds), spec))


def save_split(path, indices, spec: SplitSpec, n: int) -> None:
    train, val, test = indices
    doc = {
        "format": SPLIT_FORMAT,
        "version": SPLIT_VERSION,
        "n": n,
        "seed": spec.seed,
        "fractions": [spec.train, spec.validation, spec.test],
        "train": train.tolist(),
        "validation": val.tolist(),
        "test": test.tolist(),
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def load_split(path, n: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != SPLIT_FORMAT or doc.get("version") != SPLIT_VERSION:
        raise DataError(f"{path}: not a version-{SPLIT_VERSION} split file")
    parts = tuple(np.asarray(doc[k], dtype=np.int64) for k in ("train", "validation", "test"))
    total = doc["n"]
    if n is not None and total != n:
        raise DataError(f"{path}: split is for {total} samples, dataset has {n}")
    joined = np.sort(np.concatenate(parts))
    if not np.array_equal(joined, np.arange(total)):
        raise DataError(f"{path}: index lists are not a partition of range({total})")
    return parts


# -- standardization -------------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-channel z-score statistics (population standard deviation)."""

    channels: tuple[str, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]
    constant: tuple[bool, ...] = ()

    def __post_init__(self):
        if not self.constant:
            object.__setattr__(self, "constant", (False,) * len(self.channels))
        if not len(self.channels) == len(self.mean) == len(self.std) == len(self.constant):
            raise DataError("standardizer fields disagree in length")
        if any(not s > 0 for s in self.std):
            raise DataError("standardizer std must be positive")

    def _pos(self, channel: str) -> int:
        try:
            return self.channels.index(channel)
        except ValueError:
            raise DataError(f"standardizer has no channel {channel!r}") from None

    def transform(self, channel: str, values):
        i = self._pos(channel)
        return (np.asarray(values, dtype=np.float64) - self.mean[i]) / self.std[i]

    def inverse(self, channel: str, z):
        i = self._pos(channel)
        return np.asarray(z, dtype=np.float64) * self.std[i] + self.mean[i]

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "mean": list(self.mean),
                "std": list(self.std), "constant": list(self.constant)}

    @classmethod
    def from_dict(cls, d: dict) -> Standardizer:
        return cls(tuple(d["channels"]), tuple(d["mean"]), tuple(d["std"]), tuple(d["constant"]))


def fit_standardizer(ds: Dataset, channels: Sequence[str] = ("temperature", "frequency")) -> Standardizer:
    """Fit z-score statistics on ``ds`` (the training split).

    A constant channel gets std 1 so its z-scores are all zero; it is flagged
    in ``Standardizer.constant`` and reported with a warning.
    """
    if len(ds) == 0:
        raise DataError("cannot fit a standardizer on an empty dataset")
    means, stds, flags = [], [], []
    for name in channels:
        x = ds.channel(name)
        mu = float(np.mean(x))
        sigma = float(np.std(x))
        flat = not sigma > 1e-12 * max(1.0, abs(mu))
        if flat:
            warnings.warn(f"channel {name!r} is constant; its std is set to 1", RuntimeWarning, stacklevel=2)
            sigma = 1.0
        means.append(mu)
        stds.append(sigma)
        flags.append(flat)
    return Standardizer(tuple(channels), tuple(means), tuple(stds), tuple(flags))


# -- synthetic data --------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    """Planted-truth generator settings.

    loss = iGSE(material coeffs, ideal waveform, f) * tau(T) * exp(eps), with
    tau(T) = 1 + temp_coeff * (T - temp_ref)**2 and eps ~ N(0, noise**2).
    Duty and dwell fractions are drawn on a 1/128 grid so waveform vertices
    land on samples.
    """

    n_samples: int = 5000
    coeffs: dict = field(default_factory=lambda: dict(TABLE_SE_COEFFS))
    temperatures: tuple[float, ...] = (25.0, 50.0, 70.0, 90.0)
    temp_coeff: float = 1e-4
    temp_ref: float = 70.0
    noise: float = 0.05
    frequency_range: tuple[float, float] = (5e4, 5e5)
    amplitude_range: tuple[float, float] = (0.01, 0.3)
    waveform_classes: tuple[str, ...] = WAVEFORM_CLASSES
    duty_range: tuple[float, float] = (0.2, 0.6)
    flat_range: tuple[float, float] = (0.05, 0.15)
    sampling: str = "uniform"  # or "log-uniform", for frequency and amplitude

    def __post_init__(self):
        if self.n_samples <= 0:
            raise DataError(f"sample count must be positive, got {self.n_samples}")
        if not self.coeffs:
            raise DataError("at least one material is required")
        for material, (k, a, b) in self.coeffs.items():
            if not k > 0:
                raise DataError(f"planted k for {material!r} must be positive, got {k}")
        if self.sampling not in ("uniform", "log-uniform"):
            raise DataError(f"unknown sampling law {self.sampling!r}")
        if self.noise < 0:
            raise DataError("noise level must be non-negative")
        unknown = set(self.waveform_classes) - set(WAVEFORM_CLASSES)
        if unknown or not self.waveform_classes:
            raise DataError(f"bad waveform classes {self.waveform_classes}")
        lo, hi = self.frequency_range
        if not 0 < lo <= hi:
            raise DataError(f"bad frequency range {self.frequency_range}")
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi:
            raise DataError(f"bad amplitude range {self.amplitude_range}")
        d_lo, d_hi = self.duty_range
        f_lo, f_hi = self.flat_range
        if not (0 < d_lo <= d_hi < 1 and 0 <= f_lo <= f_hi and d_hi + 2 * f_hi < 1):
            raise DataError("duty/flat ranges leave no room for a falling edge")
        if self.temp_coeff < 0 and any(
            1 + self.temp_coeff * (t - self.temp_ref) ** 2 <= 0 for t in self.temperatures
        ):
            raise DataError("temperature factor must stay positive")

    def temperature_factor(self, t):
        return 1.0 + self.temp_coeff * (np.asarray(t, dtype=np.float64) - self.temp_ref) ** 2

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["coeffs"] = {m: list(v) for m, v in self.coeffs.items()}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorConfig:
        kwargs = dict(d)
        if "coeffs" in kwargs:
            kwargs["coeffs"] = {str(m): tuple(v) for m, v in kwargs["coeffs"].items()}
        for key in ("temperatures", "frequency_range", "amplitude_range", "waveform_classes",
                    "duty_range", "flat_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _balanced(rng: np.random.Generator, options: Sequence, n: int) -> list:
    return [options[i] for i in rng.permutation(np.resize(np.arange(len(options)), n))]


def _draw(rng, bounds, n, law):
    if law == "uniform":
        return rng.uniform(bounds[0], bounds[1], size=n)
    return np.exp(rng.uniform(np.log(bounds[0]), np.log(bounds[1]), size=n))


def synth_dataset(config: GeneratorConfig, seed: int) -> Dataset:
    """Draw a reproducible labeled dataset from the planted loss law."""
    rng = np.random.default_rng(seed)
    n = config.n_samples
    materials = _balanced(rng, list(config.coeffs), n)
    classes = _balanced(rng, list(config.waveform_classes), n)
    temps = rng.choice(np.asarray(config.temperatures, dtype=np.float64), size=n)
    freqs = _draw(rng, config.frequency_range, n, config.sampling)
    amps = _draw(rng, config.amplitude_range, n, config.sampling)
    duty = np.round(rng.uniform(*config.duty_range, size=n) * 128) / 128
    flat = np.round(rng.uniform(*config.flat_range, size=n) * 128) / 128
    eps = rng.normal(0.0, config.noise, size=n) if config.noise > 0 else np.zeros(n)

    planted = {m: SteinmetzCoeffs(*v, material=m) for m, v in config.coeffs.items()}
    flux = np.empty((n, FLUX_LENGTH))
    loss = np.empty(n)
    for i in range(n):
        cls = classes[i]
        w = synth_waveform(cls, amps[i], freqs[i], duty=duty[i], flat=flat[i])
        flux[i] = w.values
        loss[i] = igse_analytic(planted[materials[i]], cls, amps[i], freqs[i], duty[i], flat[i])
    loss = loss * config.temperature_factor(temps) * np.exp(eps)
    return Dataset(tuple(materials), tuple(classes), temps, freqs, flux, loss, "synthetic", seed)
