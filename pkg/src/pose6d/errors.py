"""Exception hierarchy shared by every module."""


class Pose6DError(Exception):
    """Base class for all library errors."""


class ValidationError(Pose6DError, ValueError):
    """Input violates a documented precondition."""


class InvariantError(ValidationError):
    """A value would break a type invariant (e.g. a non-rotation matrix)."""


class BehindCameraError(ValidationError):
    pass


class InsufficientCorrespondencesError(ValidationError):
    pass


class DegenerateConfigurationError(ValidationError):
    pass


class InsufficientSaliencyError(ValidationError):
    """Too few salient candidates were found to select the requested keypoints."""

    def __init__(self, count, requested):
        super().__init__(
            f"only {count} salient candidates found, {requested} keypoints requested"
        )
        self.count = count
        self.requested = requested


class ConfigurationError(ValidationError):
    pass


class DivergenceError(Pose6DError, ArithmeticError):
    def __init__(self, step, value):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step
        self.value = value


class FormatError(Pose6DError, ValueError):
    """Raised by every parser on malformed input. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PlyParseError(FormatError):
    pass


class MagicMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class SchemaError(FormatError):
    pass


class RotationInvariantError(SchemaError, InvariantError):
    """A stored pose does not hold a proper rotation."""
