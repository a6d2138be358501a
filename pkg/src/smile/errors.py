"""Exception types raised across the package."""


class SmileError(Exception):
    """Base class for all package errors."""


class DimensionError(SmileError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class ConfigError(SmileError, ValueError):
    """A configuration value is outside its allowed range."""


class ContractError(SmileError, ValueError):
    """A documented precondition was violated by the caller."""


class EvaluationError(SmileError, ArithmeticError):
    """A function produced a non-finite value where a finite one was required."""


class DegenerateDataError(SmileError, ValueError):
    """Input data has too little rank or energy for the requested operation."""


class GenerationError(SmileError, RuntimeError):
    """Synthetic data could not be produced within the allowed attempts."""


class DivergenceError(SmileError, ArithmeticError):
    """Training produced a non-finite loss.

    ``history`` carries the per-iteration loss records gathered before the
    failure so callers can still persist them.
    """

    def __init__(self, iteration, term, history=None):
        self.iteration = iteration
        self.term = term
        self.history = list(history or [])
        super().__init__(f"non-finite loss term {term!r} at iteration {iteration}")
