class ShapeError(ValueError):
    """Operand extents or depths are incompatible."""


class ConfigurationError(ValueError):
    """A hyperparameter or structural option is invalid."""


class ContractError(RuntimeError):
    """An operation was called outside its documented contract."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss or update."""
