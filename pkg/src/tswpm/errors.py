"""Exception hierarchy shared by every module of the package."""


class LocalizationError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(LocalizationError, ValueError):
    pass


class DegenerateGeometry(LocalizationError):
    """A position coincides with an anchor (or another node), so a direction is undefined."""


class SingularGeometry(LocalizationError):
    pass


class SingularChannel(LocalizationError):
    pass


class InfiniteVariance(LocalizationError):
    pass


class SingularCovariance(LocalizationError):
    pass


class SingularNuisanceBlock(LocalizationError):
    pass


class SingularFim(LocalizationError):
    pass


class InconsistentVariances(LocalizationError):
    """Multipath variance below the AWGN variance beyond numerical tolerance."""


class InvalidReference(LocalizationError, ValueError):
    pass


class IllConditioned(LocalizationError):
    """Gauss-Newton normal matrix could not be inverted reliably."""


class ParseError(LocalizationError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ValidationError(LocalizationError):
    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
