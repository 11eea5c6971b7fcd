"""Exception types raised across the package."""


class AbstractGoalError(Exception):
    pass


class ShapeError(AbstractGoalError, ValueError):
    pass


class DomainError(AbstractGoalError, ValueError):
    pass


class ContractError(AbstractGoalError, ValueError):
    pass


class EvaluationError(AbstractGoalError, ArithmeticError):
    pass


class ConfigError(AbstractGoalError, ValueError):
    pass


class SpecError(AbstractGoalError, ValueError):
    pass


class FormatError(AbstractGoalError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OptimizerError(AbstractGoalError, ArithmeticError):
    pass


class TrainingError(AbstractGoalError, ArithmeticError):
    pass


class SamplingError(AbstractGoalError, ValueError):
    pass
