"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class StateError(RuntimeError):
    """An object is used in a state that does not allow the operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""
