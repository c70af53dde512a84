"""Exception types shared across the package."""


class BcdaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(BcdaError, ValueError):
    pass


class NumericalFailure(BcdaError, ArithmeticError):
    pass


class StaleCache(BcdaError, RuntimeError):
    """Incremental growth requested without a fit on the same batch."""


class InsufficientData(BcdaError, ValueError):
    pass


class MisalignedTrials(BcdaError, ValueError):
    pass


class ConfigError(BcdaError, ValueError):
    pass
