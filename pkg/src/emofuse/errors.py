"""Exception types shared across the package."""


class EmofuseError(ValueError):
    """Base class for input and shape problems raised by this package."""


class DimensionError(EmofuseError):
    """Tensor shapes are incompatible for the requested operation."""


class InputError(EmofuseError):
    """User-supplied data (audio, manifest, spans, config) is invalid."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
