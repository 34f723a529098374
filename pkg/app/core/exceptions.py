"""
Exception hierarchy.

Every error the library raises on purpose derives from PickCapError; the
concrete classes are also ValueErrors so plain ``except ValueError`` callers
keep working.
"""


class PickCapError(Exception):
    """Base class for all library errors."""


class ShapeError(PickCapError, ValueError):
    """Operand dimensions do not agree."""


class UsageError(PickCapError, ValueError):
    """A call violated an operation's preconditions."""


class ConfigError(PickCapError, ValueError):
    """Configuration, checkpoint or dataset setup is unusable."""


class FormatError(PickCapError, ValueError):
    """A binary or JSON artifact is malformed."""

    def __init__(self, file: str, offset: int, message: str):
        self.file = str(file)
        self.offset = offset
        super().__init__(f"{self.file} @ byte {offset}: {message}")


class NumericsError(PickCapError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
