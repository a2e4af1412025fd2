"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class CoreLossError(Exception):
    """Base class for all package errors."""


class DataError(CoreLossError, ValueError):
    """Malformed or inadmissible input data."""


class NumericalError(CoreLossError, ArithmeticError):
    """A numeric procedure failed (rank deficiency, divergence, ...)."""


class ModelFileError(CoreLossError):
    """A model file is corrupt, of the wrong kind, or of an unknown version."""


class DegenerateWaveformWarning(UserWarning):
    """Emitted when a waveform carries no flux swing."""


class FitWarning(UserWarning):
    """Emitted for non-converged or degenerate coefficient fits."""
