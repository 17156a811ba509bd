"""Exception types raised across the package."""


class GwiError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(GwiError, ValueError):
    pass


class ConvergenceFailure(GwiError, RuntimeError):
    pass


class DimensionMismatch(GwiError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NonPositiveNoise(GwiError, ValueError):
    pass


class InvalidVariance(GwiError, ValueError):
    pass


class InvalidLabels(GwiError, ValueError):
    pass


class EmptyValidation(GwiError, ValueError):
    pass


class EmptyInput(GwiError, ValueError):
    pass


class LengthMismatch(GwiError, ValueError):
    pass


class DegenerateSplit(GwiError, ValueError):
    pass


class ParseError(GwiError, ValueError):
    """Raised for malformed data or config files; carries a location."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)


class EmptyFile(ParseError):
    pass


class NonFiniteLoss(GwiError, FloatingPointError):
    pass


class IncompatibleCheckpoint(GwiError, ValueError):
    pass


class ConfigError(ParseError):
    """A config file problem; ``field`` names the offending key when known."""

    def __init__(self, message, field=None, row=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message, row=row)
