"""Exception hierarchy shared by every layer of the toolkit."""


class LTEError(Exception):
    """Base class for all toolkit errors."""


class InputError(LTEError, ValueError):
    """Malformed or out-of-contract arguments."""


class DomainError(LTEError, ValueError):
    """Control value outside the control space, or state outside the domain."""


class NonDifferentiableError(LTEError):
    """The reduced pressure has a kink here; use ``tangent_set`` instead."""


class GradientDivergenceError(DomainError):
    """Entropy gradient diverges (state on the domain boundary)."""


class ModelInconsistencyError(LTEError):
    """A model produced a physically inconsistent value (e.g. negative inverse temperature)."""


class CoexistenceError(LTEError):
    """Singular Hessian: phase coexistence or a critical point."""


class InsufficientDataError(LTEError):
    """Tabulated data does not extend far enough around the requested point."""


class CapacityError(LTEError):
    """Requested system size exceeds the dense-backend capacity."""


class StepRejected(LTEError):
    """An explicit update pushed a cell outside the entropy domain."""


class PhaseBoundaryError(LTEError):
    """A local covariance is not positive definite at some cell."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class ConvergenceError(LTEError):
    """An iterative procedure did not reach its tolerance."""


class ConfigError(LTEError):
    """Invalid scenario configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class IntegratorError(LTEError):
    """Evolution produced a state outside the density-matrix cone beyond the floor."""
