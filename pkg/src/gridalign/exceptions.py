"""Exception and warning types raised across gridalign."""


class GridAlignError(Exception):
    """Base class for every error raised by this package."""


class InvalidBox(GridAlignError, ValueError):
    pass


class DegenerateBox(InvalidBox):
    pass


class NonFinite(InvalidBox):
    pass


class ConfidenceOutOfRange(InvalidBox):
    pass


class SetMismatch(GridAlignError, ValueError):
    pass


class RankOutOfRange(GridAlignError, ValueError):
    pass


class ZeroBaseline(GridAlignError, ZeroDivisionError):
    pass


class NoGroundTruth(GridAlignError, ValueError):
    pass


class ImageIdMismatch(GridAlignError, KeyError):
    pass


class ParseError(GridAlignError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownLabel(GridAlignError, KeyError):
    pass


class EmptyCrop(GridAlignError, ValueError):
    pass


class BadRatios(GridAlignError, ValueError):
    pass


class SpecOverflow(GridAlignError, ValueError):
    pass


class InputMissing(GridAlignError, FileNotFoundError):
    pass


class ConfigInvalid(GridAlignError, ValueError):
    pass


class BoxClampedWarning(UserWarning):
    """A box extended past its canvas and was clamped to it."""


class BoxClippedWarning(UserWarning):
    """A box straddled a crop boundary and was clipped."""
