"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class EmptyMaskError(ValueError):
    """A mask selects no positions where at least one is required."""


class GraphError(RuntimeError):
    """Misuse of the gradient tape (non-scalar loss, reused graph)."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class DegenerateSequenceError(ValueError):
    """Sequence too short for diagonal masking."""


class DataError(ValueError):
    """Malformed or unusable input data."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(RuntimeError):
    """Container file cannot be read: bad magic, version, checksum or manifest."""


class TrainingDiverged(RuntimeError):
    """Loss became NaN/Inf. ``state`` holds the last good parameters."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NonFiniteGradient(RuntimeError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name
