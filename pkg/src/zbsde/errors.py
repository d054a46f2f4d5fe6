"""Exception hierarchy shared by every module."""


class ZBsdeError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(ZBsdeError, ValueError):
    """A numeric input violates an operation's precondition."""


class ShapeError(ZBsdeError, ValueError):
    pass


class OrderingError(ZBsdeError, ValueError):
    pass


class DomainError(ZBsdeError, ValueError):
    pass


class RootNotBracketedError(ZBsdeError):
    pass


class InfeasibleError(ZBsdeError):
    """The compensator formula cannot produce a finite intensity."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class BilateralInfeasibleError(InfeasibleError):
    def __init__(self, message, times=()):
        super().__init__(message, t=times[0] if len(times) else None)
        self.times = list(times)


class NoClosedFormError(ZBsdeError):
    pass


class RegressionSingularError(ZBsdeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonConvergenceError(ZBsdeError):
    def __init__(self, message, profile=None):
        super().__init__(message)
        self.profile = profile


class MissingDerivativeError(ZBsdeError):
    pass


class DegenerateFitError(ZBsdeError):
    pass


class ConfigParseError(ZBsdeError):
    """Schema violation in a run configuration; ``path`` names the field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
