"""Exception hierarchy. Each family maps onto one CLI exit code."""


class PrefRewardError(Exception):
    exit_code = 1


class ConfigError(PrefRewardError, ValueError):
    """Invalid configuration or a request that cannot be satisfied (e.g. no preference pairs)."""

    exit_code = 2


class DataValidationError(PrefRewardError, ValueError):
    """Cohort or file content violates the trajectory contract."""

    exit_code = 3

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if field is not None:
            prefix.append(f"field '{field}'")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)


class InputError(PrefRewardError, ValueError):
    """Bad argument to a numerical routine (shape mismatch, negative dose, empty batch)."""

    exit_code = 3


class NumericalError(PrefRewardError, ArithmeticError):
    """Divergence, non-finite loss, singular or degenerate statistics."""

    exit_code = 4


class ConvergenceError(NumericalError):
    pass


class StateError(PrefRewardError, RuntimeError):
    """Operation called out of order (e.g. backward without a recorded forward)."""

    exit_code = 4
