"""Exception types shared across the package."""


class ColoraError(Exception):
    """Base class for every error raised on purpose by this package."""


class ShapeError(ColoraError, ValueError):
    pass


class NumericalError(ColoraError, ArithmeticError):
    """A computation produced NaN/Inf."""


class TapeError(ColoraError, RuntimeError):
    pass


class FingerprintError(ColoraError, ValueError):
    """Adapters or checkpoints used against a different architecture/base."""


class CheckpointError(ColoraError, ValueError):
    """Malformed checkpoint bytes. ``offset`` points at the offending field."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class RegistryError(ColoraError, RuntimeError):
    """Protocol violations: duplicate task ids, empty registries, foreign bases."""


class ConfigError(ColoraError, ValueError):
    pass
