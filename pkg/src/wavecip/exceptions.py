"""Exception hierarchy shared by all modules."""


class WavecipError(Exception):
    """Base class for all package errors."""


class ConfigError(WavecipError, ValueError):
    pass


class GeometryError(WavecipError, ValueError):
    pass


class DiscretizationError(WavecipError, ValueError):
    pass


class ShapeError(WavecipError, ValueError):
    pass


class DataError(WavecipError, ValueError):
    pass


class CFLError(WavecipError, RuntimeError):
    """Time step exceeds the explicit-scheme stability bound."""


class InstabilityError(WavecipError, RuntimeError):
    """Solution became non-finite or blew up during time stepping."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
