"""Exception types raised across the package."""


class StealthSimError(Exception):
    """Base class for all package errors."""


class IntegrationError(StealthSimError):
    """The plant integration produced a non-finite state."""


class InfeasibleSteadyState(StealthSimError):
    """Requested heater temperatures are below ambient."""


class SaturationInfeasible(StealthSimError):
    """Steady-state inputs fall outside the 0-100 % actuator range."""


class NoSolutionError(StealthSimError):
    """A Riccati iteration failed to converge."""


class DegenerateResidualError(StealthSimError):
    """The residual sample covariance is singular."""


class BracketNotFound(StealthSimError):
    """Threshold search could not bracket the target run length."""


class SchemaError(StealthSimError):
    """An artifact carries an unexpected schema version or layout."""


class RecordFormatError(StealthSimError):
    """An experiment record file is malformed."""
