"""
cdbound - Error Types
Every failure raised by the numerics, the solvers and the experiment front end.
"""
from typing import Dict, List, Optional


class CDBoundError(Exception):
    """Base class for all cdbound failures."""


class DomainError(CDBoundError, ValueError):
    """A parameter lies outside the domain an operation is defined on."""


class StateValidationError(CDBoundError, ValueError):
    """A state or density matrix violates one of its invariants."""


class SingularCouplingError(DomainError):
    """Pure sigma_z coupling: no finite optimal plateau exists."""


class IntegrabilityError(CDBoundError):
    """Quadrature of a bath functional failed to converge."""


class UnsupportedRegimeError(CDBoundError):
    """The requested combination of inputs is outside what a routine supports."""


class InsufficientTermsError(CDBoundError):
    """Exponential decomposition does not reproduce the correlation function."""


class InconsistentInputError(CDBoundError):
    """Inputs to the general bound produce a negative variance."""


class ConvergenceError(CDBoundError):
    """A solver did not converge within its escalation limits."""

    def __init__(self, message: str, deltas: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.deltas = dict(deltas or {})


class ConfigError(CDBoundError, ValueError):
    """Experiment config failed schema validation."""

    def __init__(self, errors: List[str]):
        super().__init__("\n".join(errors))
        self.errors = list(errors)
