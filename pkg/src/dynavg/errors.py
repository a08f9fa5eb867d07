class DynAvgError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DynAvgError, ValueError):
    """Invalid configuration: bad shapes, counts, or config fields."""


class NumericError(DynAvgError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DataError(DynAvgError, ValueError):
    """Malformed samples or labels."""


class ParseError(DataError):
    """A data file could not be parsed.

    ``offset`` is the byte offset (binary formats) and ``row``/``column`` the
    1-based position (text formats) where parsing failed, when known.
    """

    def __init__(self, message: str, *, offset: int | None = None,
                 row: int | None = None, column: int | None = None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} (at {', '.join(where)})" if where else message)
        self.offset = offset
        self.row = row
        self.column = column


class StreamExhausted(DynAvgError):
    """A finite, file-backed stream ran out of samples."""
