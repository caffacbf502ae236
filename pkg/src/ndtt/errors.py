"""Exception hierarchy shared by the frontend, engine and runtime."""

from __future__ import annotations


class NDTTError(Exception):
    """Base class for all errors raised by this package."""


class ProgramError(NDTTError):
    """A problem with program text, reported with a 1-based line:column."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        loc = f"{line}:{col}: " if line is not None else ""
        super().__init__(f"{loc}{type(self).__name__}: {message}")


class ProgramSyntaxError(ProgramError):
    pass


class UnsupportedExtension(ProgramSyntaxError):
    pass


class RangeRestrictionViolation(ProgramError):
    pass


class CyclicDeduction(ProgramError):
    pass


class UnstratifiedNegation(ProgramError):
    pass


class DuplicateDeclaration(ProgramError):
    pass


class ParameterError(ProgramError):
    pass


class DataError(NDTTError):
    """Observed data is inconsistent with the model (e.g. an impossible event)."""


class NoPrediction(NDTTError):
    """No event can ever happen from this state."""
