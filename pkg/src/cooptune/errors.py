"""Exception types shared across the package."""


class CoopTuneError(Exception):
    """Base class for all package errors."""


class InvalidConfig(CoopTuneError, ValueError):
    pass


class RepresentationSingularity(CoopTuneError):
    """Euler-angle map evaluated too close to gimbal lock."""


class SingularL(RepresentationSingularity):
    """The task-space rate map L1 cannot be inverted."""


class NotSymmetric(CoopTuneError, ValueError):
    pass


class IllConditioned(CoopTuneError):
    pass


class NearSingularJacobian(CoopTuneError):
    pass


class NotHurwitz(CoopTuneError):
    pass


class InfeasibleBounds(CoopTuneError):
    pass


class NonPositiveSigma(CoopTuneError):
    pass


class MalformedLog(CoopTuneError, ValueError):
    """A CSV log could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
