"""Exception hierarchy shared across the stack.

CLI exit codes: ValidationError -> 1, NumericFailure -> 2.
"""


class LocostackError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LocostackError):
    """Invalid input: bad dimensions, out-of-range spec parameters, missing files."""


class InvalidSpecError(ValidationError):
    """A terrain or dataset spec violates its declared parameter bounds."""


class InfeasibleMotionError(ValidationError):
    """Motion synthesis cannot satisfy its contact/reach constraints for these parameters."""


class NumericFailure(LocostackError):
    """A non-finite value appeared where the math requires finite numbers."""

    def __init__(self, message: str, *, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
