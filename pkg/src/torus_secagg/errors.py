"""Exception types raised across the package."""


class TorusSecAggError(Exception):
    """Base class for all package errors."""


class DomainError(TorusSecAggError, ValueError):
    """An input lies outside the domain of an operation."""


class ConfigurationError(TorusSecAggError, ValueError):
    """A configuration value violates its constraints."""


class ShapeError(TorusSecAggError, ValueError):
    """Vector lengths or model shapes do not match."""


class DataFormatError(TorusSecAggError, ValueError):
    """A data file is malformed (bad magic, bad type byte, truncated payload)."""


class DataError(TorusSecAggError, ValueError):
    """A dataset is unusable for the requested operation (e.g. empty shard)."""


class DivergenceError(TorusSecAggError, ArithmeticError):
    """Training produced a non-finite loss."""


class UndefinedMetricError(TorusSecAggError, ValueError):
    """A metric is undefined for the given inputs (zero vector, zero variance)."""


class ProtocolAbort(TorusSecAggError, RuntimeError):
    """The aggregation round cannot complete, e.g. a client did not submit."""
