"""Exception types raised across the package."""


class KDError(Exception):
    """Base class for every error raised by maxlogit_kd."""


class DegenerateLogits(KDError, ValueError):
    """A logit vector has (near) zero spread and cannot be standardized."""

    def __init__(self, message="logit vector is constant", index=None):
        if index is not None:
            message = f"{message} (sample {index})"
        super().__init__(message)
        self.index = index


class LengthMismatch(KDError, ValueError):
    pass


class NonPositiveExpansion(KDError, ValueError):
    """Odd-order exp polynomial went non-positive, so it is not a valid softmax weight."""


class OutOfRadius(KDError, ValueError):
    """Log-series argument lies outside |x| < 1."""


class InvalidOrder(KDError, ValueError):
    pass


class LabelOutOfRange(KDError, ValueError):
    pass


class InvalidSpec(KDError, ValueError):
    pass


class ShapeMismatch(KDError, ValueError):
    pass


class InvalidParams(KDError, ValueError):
    pass


class ParseError(KDError, ValueError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} at {', '.join(where)}"
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyFile(KDError, ValueError):
    pass


class IncompatibleCheckpoint(KDError, ValueError):
    pass


class ConfigError(KDError, ValueError):
    pass
