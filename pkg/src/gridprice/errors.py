"""Exception types shared across the package."""


class GridPriceError(Exception):
    """Base class for all package errors."""


class ParameterError(GridPriceError, ValueError):
    """Invalid market or partition parameters."""


class DomainError(GridPriceError, ValueError):
    """Non-finite or out-of-domain numeric input."""


class DegenerateMarketError(GridPriceError, ValueError):
    """Market clearing is undefined (zero combined elasticity)."""


class DataSizeError(GridPriceError, ValueError):
    """Too few samples for a well-posed regression."""


class RankDeficiencyError(GridPriceError, ValueError):
    """Singular normal equations; a positive ridge is required."""


class AssemblyError(GridPriceError, ValueError):
    """Dimension mismatch while assembling matrix blocks."""


class BracketError(GridPriceError, ValueError):
    """Bisection bracket does not enclose a feasible point."""


class ConditioningError(GridPriceError, ValueError):
    """A matrix is too ill-conditioned to invert reliably."""


class SynthesisError(GridPriceError, RuntimeError):
    """Gain synthesis could not produce a certified solution."""


class IntegrationError(GridPriceError, RuntimeError):
    """The integrator encountered a non-finite derivative."""


class DivergenceError(GridPriceError, RuntimeError):
    """State left the divergence guard during simulation.

    Carries the trajectory prefix recorded up to the failure.
    """

    def __init__(self, message, t, prefix=None):
        super().__init__(message)
        self.t = t
        self.prefix = prefix


class ConfigError(GridPriceError, ValueError):
    """Scenario configuration is invalid.

    ``key`` and ``line`` identify the offending entry when known.
    """

    def __init__(self, message, key=None, line=None):
        if key is not None and line is not None:
            message = f"{message} (key '{key}', line {line})"
        elif key is not None:
            message = f"{message} (key '{key}')"
        super().__init__(message)
        self.key = key
        self.line = line


class DependencyError(GridPriceError, RuntimeError):
    """A pipeline stage is missing a required input artifact."""
