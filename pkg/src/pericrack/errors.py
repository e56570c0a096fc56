"""Exception types shared across the package."""


class PericrackError(Exception):
    """Base class for all package errors."""


class ParameterError(PericrackError, ValueError):
    """A numeric parameter violates its precondition."""


class InputError(PericrackError, ValueError):
    """Malformed input data (geometry, datasets, files)."""


class DegenerateBondError(PericrackError, ValueError):
    """A bond has zero reference or deformed length."""


class ZeroWeightedVolumeError(PericrackError, ValueError):
    """A particle has no unbroken bonds, so its weighted volume vanishes."""


class ConsistencyError(PericrackError, RuntimeError):
    """Derived state no longer matches the bond topology it was built from."""


class DivergenceError(PericrackError, RuntimeError):
    """Non-finite values appeared during time integration or training."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ShapeError(PericrackError, ValueError):
    """Tensor shapes are incompatible for an operation."""


class FormatError(PericrackError, ValueError):
    """A persisted file (dump, IDX, checkpoint) could not be decoded."""


class ConfigError(PericrackError, ValueError):
    """Invalid run configuration."""
