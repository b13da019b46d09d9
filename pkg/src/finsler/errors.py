"""Exception hierarchy shared by all modules."""


class FinslerError(Exception):
    """Base class for every error raised by this package."""


class ParseError(FinslerError):
    def __init__(self, message, position=0, expected=None, source=""):
        self.message = message
        self.position = position
        self.expected = expected
        self.source = source
        text = f"{message} at position {position}"
        if expected:
            text += f" (expected {expected})"
        super().__init__(text)


class DomainError(FinslerError):
    """Evaluation left the smooth domain of an expression."""


class NonSmoothError(FinslerError):
    """Differentiation of a function that is not smooth (``abs``)."""


class NotAdmissible(FinslerError):
    """A direction lies outside the conic domain of the metric."""

    def __init__(self, message, x=None, y=None):
        self.x = x
        self.y = y
        super().__init__(message)


class DegenerateMetric(FinslerError):
    """The fundamental tensor is (numerically) singular."""


class DomainExit(FinslerError):
    """An integrated direction field left the conic domain."""

    def __init__(self, t_exit, result=None):
        self.t_exit = t_exit
        self.result = result
        super().__init__(f"direction left the domain at t = {t_exit!r}")


class StepFailure(FinslerError):
    """The integrator produced a non-finite state."""


class ChartError(FinslerError):
    """A sample point lies outside a chart's validity box."""


class SamplerExhausted(FinslerError):
    """Rejection sampling failed to find an admissible point."""


class SpecError(FinslerError):
    """A metric specification document is invalid."""
