"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``UsageError`` -> 1, any other
``PoxbenchError`` -> 2, ``LeakageError`` -> 3.
"""


class PoxbenchError(Exception):
    """Base class for every error raised deliberately by this package."""


class UsageError(PoxbenchError):
    """Invalid combination of options."""


class ConfigurationError(PoxbenchError):
    pass


class StratificationError(PoxbenchError):
    pass


class ExtractionError(PoxbenchError):
    pass


class ContractError(PoxbenchError):
    """A declared shape or dimension did not match what was produced."""


class StaleCacheError(PoxbenchError):
    pass


class ResamplingError(PoxbenchError):
    pass


class TrainingError(PoxbenchError):
    pass


class InputError(PoxbenchError, ValueError):
    pass


class MetricsError(PoxbenchError):
    pass


class AggregationError(PoxbenchError):
    pass


class UndefinedKappaError(MetricsError):
    pass


class DegenerateSampleError(PoxbenchError):
    pass


class LeakageError(PoxbenchError):
    """A training row was traced back to a hold-out test image."""
