"""Exception hierarchy shared by all solver modules."""


class ErgImpError(Exception):
    """Base class for every error raised by the package."""


class GridError(ErgImpError):
    pass


class KernelError(ErgImpError):
    pass


class ConvergenceError(ErgImpError):
    """Raised when an iterative solver exhausts its cap.

    The last residual is kept on the instance so callers can report it.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(ErgImpError):
    pass


class RegimeError(ErgImpError):
    pass


class PolicyError(ErgImpError):
    pass


class BoundViolation(ErgImpError):
    """A verified inequality failed; ``bound`` names it and ``state`` locates it."""

    def __init__(self, bound, state, slack):
        super().__init__(f"bound {bound} violated at state {state} (slack {slack:.3e})")
        self.bound = bound
        self.state = state
        self.slack = slack


class ConfigError(ErgImpError):
    pass
