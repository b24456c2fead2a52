"""Exception types shared across the package."""


class SynbiasError(Exception):
    pass


class ContractError(SynbiasError, ValueError):
    """A precondition of an operation was violated."""


class ShapeError(ContractError):
    """Operand shapes do not conform to the primitive."""


class NumericalInstabilityError(SynbiasError, ArithmeticError):
    """A primitive produced NaN or Inf."""


class VocabularyError(SynbiasError, KeyError):
    pass


class ParseError(SynbiasError, ValueError):
    """Malformed ListOps or logic expression."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at token {position})")
        self.position = position


class ConfigError(SynbiasError, ValueError):
    pass


class TrainingDivergedError(SynbiasError, ArithmeticError):
    """The loss became non-finite; the last good checkpoint is left in place."""
