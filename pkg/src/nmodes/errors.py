"""Exception hierarchy shared by every nmodes module."""


class NModesError(Exception):
    """Base class for all library errors."""


class ContractViolation(NModesError, ValueError):
    """Inputs violate a documented precondition (shape, sign, range)."""


class SingularMassError(NModesError):
    """The mass matrix is singular or too ill-conditioned to solve with."""


class IntegrationError(NModesError):
    """Time integration failed."""


class StiffnessError(IntegrationError):
    """The adaptive step size underflowed."""


class DivergenceError(IntegrationError):
    """The state became non-finite during integration."""


class ConvergenceError(NModesError):
    """An iterative solver hit its iteration cap."""


class SaddlePointError(NModesError):
    """A stationary point of the potential is not a strict local minimum."""


class UnstableEquilibriumError(SaddlePointError):
    """Linearization found a non-positive stiffness eigenvalue."""


class BranchPointError(NModesError):
    """The continuation Jacobian lost rank (bifurcation or modal crossing)."""


class ModelSpecError(NModesError, ValueError):
    """A model-spec document failed to parse or validate."""


class EnergyRangeError(NModesError, ValueError):
    """A requested energy is not covered by the available manifold(s)."""
