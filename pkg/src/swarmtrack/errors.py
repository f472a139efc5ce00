"""Exception types raised across the package."""


class TrackingError(Exception):
    """Base class for all package errors."""


class PointBehindCamera(TrackingError):
    pass


class DegenerateRays(TrackingError):
    pass


class DegenerateRig(TrackingError):
    pass


class DimensionMismatch(TrackingError, ValueError):
    pass


class SingularInnovation(TrackingError):
    pass


class FactorizationFailure(TrackingError):
    pass


class AllZeroWeights(TrackingError):
    pass


class WarmupIncomplete(TrackingError):
    """Raised when a CSKPF step is requested before the tracker's warm-up ends."""


class ObjectOutOfView(TrackingError):
    pass


class NoMatches(TrackingError):
    pass


class InsufficientFrames(TrackingError):
    pass


class CalibrationMissing(TrackingError):
    pass


class ConfigError(TrackingError, ValueError):
    """Invalid user configuration."""
