"""Exception hierarchy shared by the library and the CLI."""


class SipmError(Exception):
    """Base class for all errors raised by sipmcal."""


class DomainError(SipmError, ValueError):
    """An argument lies outside the domain of the operation."""


class FitError(SipmError, RuntimeError):
    """A least-squares fit could not be carried out."""


class CalibrationError(SipmError, RuntimeError):
    """A calibration procedure has no physical solution."""


class NoSolutionError(CalibrationError):
    """The gain/cross-talk quadratic has no real root."""


class EstimationError(SipmError, RuntimeError):
    """A statistical estimate is undefined for the given data."""


class DetectionError(SipmError, RuntimeError):
    """Peak detection found nothing usable."""


class PreconditionError(CalibrationError):
    """The data do not satisfy the requirements of the analysis."""


class ParseError(SipmError, ValueError):
    """An input file could not be parsed."""


class FormatError(ParseError):
    """An input file parsed but violates its format rules."""
