"""Exception hierarchy shared by the numerical modules."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class RangeError(OverflowError):
    """Result not representable as a finite double."""


class ConvergenceError(RuntimeError):
    """An iterative solver or quadrature failed to reach its tolerance.

    ``trace`` holds whatever per-iteration diagnostics the solver kept.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class UnsupportedConfigurationError(ValueError):
    """The requested closed form does not exist for this configuration."""


class InfeasibleApproximationError(ValueError):
    """A closed-form approximation left its region of validity."""


class InfeasibleError(ValueError):
    """No message size >= k0 can meet the error target."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
