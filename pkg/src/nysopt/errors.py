"""Exception types raised across the package."""


class NysoptError(Exception):
    """Base class for all package errors."""


class ConfigError(NysoptError, ValueError):
    """Invalid hyperparameter, index set or experiment configuration."""


class ParseError(NysoptError, ValueError):
    """Malformed LIBSVM input. Carries the offending 1-based line number."""

    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class SingularMatrixError(NysoptError, ArithmeticError):
    """Factorization met a nonpositive pivot."""


class DivergenceError(NysoptError, ArithmeticError):
    """An optimizer produced a non-finite or exploding objective.

    The partial trace (including a final ``status="diverged"`` record) is kept
    on the exception so callers can still persist it.
    """

    def __init__(self, message, *, iteration, config=None, trace=None):
        self.iteration = iteration
        self.config = config
        self.trace = list(trace or [])
        super().__init__(f"{message} (iteration {iteration})")
