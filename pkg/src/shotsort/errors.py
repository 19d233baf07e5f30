"""Exception types shared across the package."""


class ShotSortError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(ShotSortError, ValueError):
    """An argument violates a precondition (non-positive width, empty window, ...)."""


class BundleFormatError(ShotSortError, ValueError):
    """A shot bundle file is malformed (bad magic, truncated payload, ...)."""


class CalibrationRangeError(ShotSortError, ValueError):
    """Signal content lies outside the calibrated range.

    Carries the nearest calibration entry as ``nearest`` (N, content_mean,
    content_std).
    """

    def __init__(self, message, nearest):
        super().__init__(message)
        self.nearest = nearest


class DegenerateClassError(ShotSortError, ValueError):
    """A class ended up empty during averaging; ``class_id`` names it."""

    def __init__(self, message, class_id):
        super().__init__(message)
        self.class_id = class_id
