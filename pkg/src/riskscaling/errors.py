"""Exception types shared across the library."""
from __future__ import annotations


class RiskScalingError(Exception):
    """Base class for all library-specific errors."""


class ParameterError(RiskScalingError, ValueError):
    """A spec, estimator, or problem was constructed with invalid parameters."""


class InsufficientSampleError(RiskScalingError, ValueError):
    """A sample is too short for the requested statistic or estimator."""


class DegenerateFitError(RiskScalingError, ValueError):
    """A distribution fit produced unusable parameters."""


class PanelError(RiskScalingError, RuntimeError):
    """A Monte Carlo panel could not be built (e.g. excessive estimator failures)."""


class UnboundedScalarError(RiskScalingError, RuntimeError):
    """No finite scaling factor brings the secured position's risk to zero."""


class IngestionError(RiskScalingError, ValueError):
    """A returns file could not be ingested under the declared format."""


class ConfigError(RiskScalingError, ValueError):
    """A run configuration is malformed or contains unknown keys."""
