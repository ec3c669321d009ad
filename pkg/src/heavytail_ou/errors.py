"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """An argument is non-finite, out of range or inconsistent."""


class EmptyDataError(ValueError):
    """A statistic was requested from an empty sample."""


class OutOfRegimeError(ValueError):
    """The requested quantity is only defined for p > 2."""


class ExtrapolationError(RuntimeError):
    """Horizon values are inconsistent with a converging minimisation."""


class ConfigError(ValueError):
    """A run configuration failed validation."""
