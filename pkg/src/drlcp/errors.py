"""Exception hierarchy shared by all drlcp modules."""


class DrlcpError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(DrlcpError, ValueError):
    """Inconsistent or malformed input data."""


class OutOfSupport(ValidationError):
    """A disturbance value lies outside its hyperrectangular support.

    ``row`` and ``col`` locate the offending entry when the value came from a
    sample matrix (``row`` is None for a single trajectory).
    """

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ShapeMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class PieceExplosion(DrlcpError):
    """Too many combined cost pieces (product of per-stage piece counts)."""


class ModelTooLarge(DrlcpError):
    pass


class NumericalFailure(DrlcpError):
    """The simplex could not restore an accurate factorization."""


class ConfigError(ValidationError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path:
            where += f" at '{path}'"
        if line is not None:
            where += f" (line {line})"
        super().__init__(message + where)
        self.path = path
        self.line = line
