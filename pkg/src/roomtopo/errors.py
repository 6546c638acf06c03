"""Exception hierarchy shared by all roomtopo modules."""

from __future__ import annotations


class RoomTopoError(Exception):
    """Base class for every domain error raised by this package."""


class ParseError(RoomTopoError):
    """Malformed point-cloud input.

    ``offset`` is the byte offset (binary/PLY input) and ``line`` the 1-based
    line number (text input) where the problem was detected, when known.
    """

    def __init__(self, message: str, *, offset: int | None = None, line: int | None = None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} (at {', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class SchemaError(RoomTopoError):
    """A structured document does not match its expected schema."""


class DimensionError(RoomTopoError, ValueError):
    """Array or embedding dimensions disagree."""


class GeometryError(RoomTopoError, ValueError):
    """Degenerate or invalid geometric input."""
