"""Exception hierarchy shared by every subsystem."""


class RelightError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RelightError, ValueError):
    pass


class DivisionGuardError(InvalidInputError):
    """Divisor magnitude fell below the configured guard."""


class NumericFaultError(RelightError, ArithmeticError):
    """NaN/Inf produced, or an estimate collapsed towards zero."""


class FormatError(RelightError, ValueError):
    """A file could not be parsed."""


class BadMagicError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class InvalidMetadataError(InvalidInputError):
    pass


class SensorMismatchError(InvalidInputError):
    pass


class DataError(RelightError):
    """Dataset contents do not fit the requested operation (e.g. regime mismatch)."""


class CheckpointMismatchError(DataError):
    pass
