"""Exception hierarchy shared by all dvlnav modules."""

from __future__ import annotations


class DvlNavError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(DvlNavError, ValueError):
    """Invalid user input (configuration, file contents, arguments)."""


class NumericalError(DvlNavError, ArithmeticError):
    """A computation could not be carried out on otherwise valid input."""


class PolarSingularity(NumericalError):
    """Latitude too close to a pole for the local-level mechanization."""


class GimbalLock(NumericalError):
    """Euler decomposition requested at the pitch singularity."""


class DegenerateVectors(NumericalError):
    """Reference vectors are (nearly) parallel."""


class UnderdeterminedRotation(NumericalError):
    """Rotation fit leaves one axis unconstrained.

    The best-fit rotation and the unconstrained axis are attached so callers
    can treat this as a partial result.

    Attributes
    ----------
    rotation : ndarray, shape (3, 3)
        Best-fit rotation (closest to identity about the free axis).
    free_axis : ndarray, shape (3,)
        Unit vector, expressed in the left-hand frame, about which the fit
        is invariant.
    """

    def __init__(self, message, rotation=None, free_axis=None):
        super().__init__(message)
        self.rotation = rotation
        self.free_axis = free_axis


class CoplanarPoints(NumericalError):
    """Sphere fit attempted on coplanar points."""


class StepTooLarge(ValidationError):
    """Integration step above the mechanization bound."""


class InvalidPlan(ValidationError):
    """Motion plan is not contiguous or has bad parameters."""


class SegmentTooShort(ValidationError):
    """Calibration segment shorter than the minimum duration."""


class StreamGap(ValidationError):
    """Missing samples inside a processing interval."""


class InsufficientExcitation(NumericalError):
    """Too few informative samples to estimate a quantity."""


class NoExcitation(NumericalError):
    """No segment carries a usable excitation direction."""


class InsufficientTurning(NumericalError):
    """Turning data too short for the non-coplanarity test."""


class InnovationGateExceeded(NumericalError):
    """Measurement rejected by the innovation gate.

    Attributes
    ----------
    nis : float
        Normalized innovation squared of the rejected measurement.
    """

    def __init__(self, message, nis=float("nan")):
        super().__init__(message)
        self.nis = nis


class TimebaseMismatch(ValidationError):
    """DVL timestamps do not line up with the IMU time base."""


class NoTypeISegments(NumericalError):
    """No constant-attitude excited segment was found for calibration."""


class UnknownFigure(ValidationError):
    """Requested figure id has no data recipe."""


class ConfigError(ValidationError):
    """Configuration file error, with location information when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
