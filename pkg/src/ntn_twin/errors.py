"""Exception hierarchy shared by all subsystems."""


class NtnTwinError(Exception):
    """Base class for every error raised by this package."""


class TleParseError(NtnTwinError, ValueError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class PropagationError(NtnTwinError, ValueError):
    pass


class ConvergenceError(PropagationError):
    pass


class FileFormatError(NtnTwinError, ValueError):
    pass


class GeometryError(NtnTwinError, ValueError):
    pass


class ShapeError(NtnTwinError, ValueError):
    pass


class NonFiniteError(NtnTwinError, FloatingPointError):
    pass


class DivergenceError(NtnTwinError, RuntimeError):
    pass


class CheckpointMismatchError(NtnTwinError, ValueError):
    pass


class InvariantViolation(NtnTwinError, RuntimeError):
    pass


class ConfigError(NtnTwinError, ValueError):
    pass
