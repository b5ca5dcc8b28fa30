"""Exception types shared across the package.

The CLI maps these onto its exit-code contract, so keep the hierarchy flat.
"""


class SDDMError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SDDMError, ValueError):
    """Invalid parameters, scenario files or overrides."""

    def __init__(self, message, source=None, line=None):
        self.source = source
        self.line = line
        if source is not None and line is not None:
            message = f"{source}:{line}: {message}"
        elif source is not None:
            message = f"{source}: {message}"
        super().__init__(message)


class StabilityError(SDDMError):
    """Closed-loop matrix is not Hurwitz."""


class EigenvaluePairingError(SDDMError, ArithmeticError):
    """Lyapunov operator is singular (two eigenvalues sum to zero)."""


class BoundUncertainError(SDDMError):
    """Output peak could not be certified within the allowed horizon."""


class NumericalError(SDDMError, ArithmeticError):
    """A root finder or integrator failed; carries diagnostics in the message."""


class NumericalBlowupError(NumericalError):
    """Simulated state became non-finite."""

    def __init__(self, message, last_record=None):
        super().__init__(message)
        self.last_record = last_record


class PlanningFailure(SDDMError):
    """No path exists on the inflated grid."""


class SensorPoseError(SDDMError):
    """Lidar origin lies inside an obstacle."""
