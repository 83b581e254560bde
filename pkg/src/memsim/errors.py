"""Exception hierarchy shared by all simulator modules."""


class MemsimError(Exception):
    """Base class for simulator errors."""


class DomainError(MemsimError, ValueError):
    """Input outside the mathematical domain of an operation (NaN, out of range)."""


class ParameterError(MemsimError, ValueError):
    """Invalid model parameters."""


class ShapeError(MemsimError, ValueError):
    """Array dimensions do not match."""


class NumericError(MemsimError, ArithmeticError):
    """A linear solve or integration failed numerically."""


class CalibrationError(MemsimError, ValueError):
    pass


class MappingError(MemsimError, ValueError):
    pass


class PlanningError(MemsimError, ValueError):
    pass


class IngestionError(MemsimError, ValueError):
    """Dataset files are missing, truncated or malformed."""


class SteadyStateError(MemsimError, RuntimeError):
    pass


class IntegrationError(NumericError):
    pass


class TrainingDiverged(MemsimError, RuntimeError):
    pass


class ConfigError(MemsimError, ValueError):
    pass
