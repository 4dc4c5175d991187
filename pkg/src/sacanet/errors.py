"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Shapes of the operands are incompatible."""


class InputError(ValueError):
    """A value is outside the accepted domain (labels, datasets, metrics)."""


class ConfigError(ValueError):
    """A configuration violates its invariants."""
