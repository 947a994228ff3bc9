"""
Custom exceptions for hoiforge
"""


class HOIForgeError(Exception):
    """Base exception for all hoiforge errors"""

    exit_code = 1

    def __init__(self, message, exit_code=None):
        super().__init__(message)
        if exit_code is not None:
            self.exit_code = exit_code


class ValidationError(HOIForgeError):
    """Raised when a config, schema or input file fails validation"""

    exit_code = 2


class ShapeError(HOIForgeError):
    """Raised when array shapes, frame counts or divisibility rules disagree"""

    exit_code = 3


class LengthMismatchError(ShapeError):
    """Raised when two tracklets have different lengths"""
    pass


class NonWatertightError(HOIForgeError):
    """Raised when a mesh edge is not shared by exactly two faces"""
    pass


class BehindCameraError(HOIForgeError):
    """Raised when a point cannot be projected because it lies behind the camera"""
    pass


class NoForegroundError(HOIForgeError):
    """Raised when the first frame of a scene renders no surface"""
    pass


class EmptySetError(HOIForgeError):
    """Raised when a metric receives an empty tracklet set"""
    pass


class DegenerateError(HOIForgeError):
    """Raised when a point set has no spread to align"""
    pass


class InsufficientSamplesError(HOIForgeError):
    """Raised when too few feature rows are given to estimate a covariance"""
    pass


class NotPSDError(HOIForgeError):
    """Raised when a covariance product has materially negative eigenvalues"""
    pass
