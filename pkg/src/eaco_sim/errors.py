class EacoSimError(Exception):
    """Base class for all simulator errors."""


class ProfileParseError(EacoSimError):
    pass


class ProfileValidationError(EacoSimError):
    pass


class UnknownModelError(EacoSimError, LookupError):
    pass


class FitError(EacoSimError):
    pass


class ConfigError(EacoSimError, ValueError):
    pass


class TraceError(EacoSimError):
    """Malformed or invalid job trace."""


class ContractError(EacoSimError):
    """A caller broke an operation's precondition."""


class PredictionError(EacoSimError):
    pass


class SimulationFinished(EacoSimError):
    """Raised by ``Engine.step`` once every job has completed or been rejected."""


class MetricsError(EacoSimError, ValueError):
    """A report cannot be normalised or aggregated as requested."""
