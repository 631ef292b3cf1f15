"""Exception types shared across the package."""


class MosquitoPnPError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MosquitoPnPError, ValueError):
    """A configuration value is malformed or out of range."""


class ParameterError(MosquitoPnPError, ValueError):
    """An operation received an invalid parameter."""


class ShapeError(MosquitoPnPError, ValueError):
    """Array dimensions or channel counts do not match what was expected."""


class DegenerateHistogramError(MosquitoPnPError):
    """Otsu thresholding on an image with a single populated histogram bin."""


class ContractViolation(MosquitoPnPError):
    """A documented precondition was violated by the caller."""


class SegmentationError(MosquitoPnPError):
    """Post-processing could not produce a required anatomical point."""


class NoGraspPointError(SegmentationError):
    pass


class NoDissectionPointError(SegmentationError):
    pass


class CalibrationError(MosquitoPnPError):
    """Calibration acquisition, fitting or scale estimation failed."""


class DetectionError(CalibrationError):
    """No tool could be found in a calibration frame."""


class MotionError(MosquitoPnPError):
    """A commanded motion would leave the axis travel."""
