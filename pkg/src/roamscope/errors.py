"""Exception taxonomy shared across the package."""


class RoamscopeError(Exception):
    """Base class for all package-specific failures."""


class DomainError(RoamscopeError, ValueError):
    """Input outside the mathematical domain (e.g. non-positive radius)."""


class EnergyBudgetError(RoamscopeError, ValueError):
    """Requested momentum exceeds the constant-kinetic-energy budget."""


class OverflowGuardError(RoamscopeError, OverflowError):
    """Exponential of the potential would leave double range."""


class StationaryPointError(RoamscopeError, RuntimeError):
    """Stationary-point search failed; carries per-seed residuals."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or []


class RefinementError(RoamscopeError, RuntimeError):
    """Periodic-orbit refinement did not converge; carries residuals."""

    def __init__(self, message, residuals=None, condition=None):
        super().__init__(message)
        self.residuals = residuals if residuals is not None else []
        self.condition = condition


class ExtractionError(RoamscopeError, RuntimeError):
    """Manifold extraction produced no usable trace."""


class ConfigError(RoamscopeError, ValueError):
    """Malformed configuration file or command-line input."""


class ConstraintWarning(UserWarning):
    """State violates the constant-kinetic-energy constraint."""
