"""Exception hierarchy shared across fieldmap modules."""


class FieldmapError(Exception):
    """Base class for all fieldmap errors."""


class DegenerateMask(FieldmapError):
    pass


class NonPositiveDisparity(FieldmapError):
    pass


class BehindCamera(FieldmapError):
    pass


class NonUnitQuaternion(FieldmapError):
    pass


class EmptySide(FieldmapError):
    pass


class TrackLost(FieldmapError):
    """Raised when too few temporal matches survive for too many frames."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class BackendFailure(FieldmapError):
    pass


class InsufficientOverlap(FieldmapError):
    pass


class Degenerate(FieldmapError):
    pass


class NoGroundTruth(FieldmapError):
    pass


class ConfigError(FieldmapError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class EmptyInput(FieldmapError):
    pass


class MissingGroundTruth(FieldmapError):
    pass


class FrameMismatch(FieldmapError):
    pass
