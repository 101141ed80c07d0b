"""Exception types raised across the package."""


class SwisError(Exception):
    """Base class for all package errors."""


class DatasetNotFound(SwisError):
    pass


class LayoutViolation(SwisError):
    pass


class DatasetIncomplete(SwisError):
    pass


class InsufficientReferences(SwisError):
    pass


class CorruptImage(SwisError):
    pass


class BlankImage(SwisError):
    pass


class BlankSignature(SwisError):
    pass


class ShapeViolation(SwisError, ValueError):
    pass


class DegenerateDimension(SwisError, ValueError):
    pass


class InvalidTemperature(SwisError, ValueError):
    pass


class Divergence(SwisError, FloatingPointError):
    def __init__(self, step: int, what: str = "non-finite gradient"):
        super().__init__(f"divergence at step {step}: {what}")
        self.step = step


class IncompatibleCheckpoint(SwisError):
    pass


class NeedTwoClasses(SwisError, ValueError):
    pass


class UnknownWriter(SwisError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown writer"


class InsufficientSamples(SwisError, ValueError):
    pass


class ConfigError(SwisError, ValueError):
    pass
