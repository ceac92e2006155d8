"""Exception types shared across the package."""


class GipaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GipaError, ValueError):
    pass


class ContractError(GipaError, ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(GipaError, ValueError):
    pass


class IngestionError(GipaError, ValueError):
    """Malformed input data. Carries the offending location when known."""

    def __init__(self, message, *, file=None, line=None, record=None):
        where = []
        if file is not None:
            where.append(str(file))
        if line is not None:
            where.append(f"line {line}")
        if record is not None:
            where.append(f"record {record}")
        full = f"{': '.join(where)}: {message}" if where else message
        super().__init__(full)
        self.file = file
        self.line = line
        self.record = record


class UndefinedAUCError(GipaError, ValueError):
    """ROC-AUC is undefined because only one class is present."""


class DivergenceError(GipaError, RuntimeError):
    """Training produced a non-finite loss or gradient."""
