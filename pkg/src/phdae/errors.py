"""Exception types shared across the package."""


class PhdaeError(Exception):
    """Base class for all package errors."""


class StructureError(PhdaeError, ValueError):
    """A system, grid or coupling violates a structural requirement."""


class EvaluationError(PhdaeError, ArithmeticError):
    """A user-supplied function returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ParseError(PhdaeError, ValueError):
    """Malformed netlist or device description."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelError(PhdaeError, ValueError):
    """An element model reference cannot be resolved."""


class PreconditionError(PhdaeError, ValueError):
    """An operation was called outside its domain."""


class InitializationError(PhdaeError, RuntimeError):
    """Consistent initialization failed.

    ``violations`` lists ``(equation_label, residual)`` pairs for the algebraic
    equations that could not be satisfied.
    """

    def __init__(self, message, violations=(), history=()):
        super().__init__(message)
        self.violations = list(violations)
        self.history = list(history)


class IntegrationError(PhdaeError, RuntimeError):
    """Newton failure or non-finite state during time stepping."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class WindowDivergenceError(PhdaeError, RuntimeError):
    """Dynamic iteration did not converge within the sweep limit."""

    def __init__(self, message, window=None, contraction=()):
        super().__init__(message)
        self.window = window
        self.contraction = list(contraction)
