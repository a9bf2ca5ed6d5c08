"""Exception types shared across the package."""


class EvtrackError(Exception):
    """Base class for all package errors."""


class DomainError(EvtrackError, ValueError):
    """An input lies outside the domain of an operation."""


class ParseError(EvtrackError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(EvtrackError, ValueError):
    """A file parsed line by line but violates a whole-file constraint."""


class KindError(EvtrackError, ValueError):
    """An event frame of the wrong kind was passed."""


class InsufficientConstraintsError(EvtrackError):
    """Too few valid residuals to constrain a 6-DoF pose."""


class NumericalFailure(EvtrackError, ArithmeticError):
    pass


class TrackingFailure(EvtrackError):
    """No representation could track a frame.

    ``result`` holds the fallback result with the pose held at the initial guess.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class SamplingRateError(EvtrackError, ValueError):
    """Pose sampling too coarse for the contrast threshold."""
