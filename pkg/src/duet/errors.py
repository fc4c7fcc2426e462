"""Exception hierarchy shared by every module."""


class DuetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(DuetError, ValueError):
    pass


class DegenerateRotation(DuetError, ValueError):
    pass


class TooShort(DuetError, ValueError):
    pass


class InvalidSpec(DuetError, ValueError):
    pass


class InvalidFraction(DuetError, ValueError):
    pass


class InvalidParams(DuetError, ValueError):
    pass


class InvalidTimesteps(DuetError, ValueError):
    pass


class InvalidTimestep(DuetError, ValueError):
    pass


class InvalidShape(DuetError, ValueError):
    pass


class NonFiniteActivation(DuetError, FloatingPointError):
    pass


class NonFiniteGradient(DuetError, FloatingPointError):
    pass


class DivergenceDetected(DuetError, FloatingPointError):
    pass


class MissingCondition(DuetError, ValueError):
    pass


class IncompatibleModels(DuetError, ValueError):
    pass


class SizeMismatch(DuetError, ValueError):
    pass


class ConfigError(DuetError, ValueError):
    pass


class IncompatibleCheckpoint(DuetError, ValueError):
    pass


class IoError(DuetError, OSError):
    pass
