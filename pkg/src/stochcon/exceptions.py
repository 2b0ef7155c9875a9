"""Exception taxonomy shared across the package."""


class DimensionError(ValueError):
    """Operand shapes or axes are incompatible."""


class DomainError(ValueError):
    """Input lies outside an operation's mathematical domain."""


class ParameterError(ValueError):
    """A hyperparameter or argument is out of its allowed range."""


class ContractError(RuntimeError):
    """A documented precondition was violated by the caller."""


class DataError(RuntimeError):
    """A file or dataset is missing, malformed, or mismatched."""


class NumericalFailure(RuntimeError):
    """Training or evaluation produced a non-finite value."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
