"""Exception types shared across the toolkit."""

from __future__ import annotations


class MemauditError(Exception):
    """Base class for every error this package raises deliberately."""


class ValidationError(MemauditError, ValueError):
    """Argument or state outside its documented range."""


class ShapeError(ValidationError):
    """Dimension mismatch. Message names the operation and both shapes."""


class FormatError(MemauditError, ValueError):
    """Malformed file content; carries the byte offset where parsing failed."""

    def __init__(self, message: str, *, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(MemauditError, RuntimeError):
    """Operation invoked on an object in the wrong state."""


class ConfigMismatchError(MemauditError, ValueError):
    """Loaded config disagrees with the expected one; lists differing fields."""

    def __init__(self, fields: dict[str, tuple[object, object]]):
        self.fields = dict(fields)
        detail = ", ".join(
            f"{name}: expected {exp!r}, found {got!r}"
            for name, (exp, got) in sorted(self.fields.items())
        )
        super().__init__(f"config mismatch: {detail}")
