"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Input rejected because its shape or dtype does not fit the operation."""


class StateError(RuntimeError):
    """Operation invoked before a required earlier step (e.g. backward before forward)."""


class FormatError(ValueError):
    """Malformed serialized payload: bad magic, truncation, or inconsistent header."""


class TrainingError(RuntimeError):
    """Training cannot proceed: degenerate data or non-finite gradients."""


class ConfigError(ValueError):
    """Scenario file problem; message carries file and line context where known."""


class ResyncError(RuntimeError):
    """Message refers to a model version the receiver does not hold."""
