"""Exception types shared across the package."""


class FinslerError(Exception):
    """Base class for all package errors."""


class SlitProximityError(FinslerError):
    """A fiber vector lies on, or too close to, the slit of a norm."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class DimensionError(FinslerError, ValueError):
    pass


class SpecError(FinslerError, ValueError):
    """Invalid norm data: non-SPD metric, out-of-range eigenvalues, long field vectors."""


class SingularKappaError(FinslerError):
    def __init__(self, message, kappa=None):
        super().__init__(message)
        self.kappa = kappa


class FiniteDifferenceError(FinslerError):
    """A stencil point could not be evaluated (usually because it crossed the slit)."""


class AlignmentError(FinslerError, ValueError):
    pass


class ConfigError(FinslerError, ValueError):
    """Malformed or inconsistent run configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
