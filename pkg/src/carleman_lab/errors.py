"""Exception hierarchy shared by all modules."""


class CarlemanLabError(Exception):
    """Base class for every error raised by this package."""


class DomainError(CarlemanLabError):
    """A point lies outside the closed domain."""


class ValidationError(CarlemanLabError):
    """Input data violates a structural requirement (symmetry, shapes, ...)."""


class EllipticityError(ValidationError):
    """The coefficient matrix is singular or not uniformly positive definite."""


class ParameterError(CarlemanLabError):
    """A scalar parameter is outside its admissible range."""


class PreconditionError(CarlemanLabError):
    """A documented precondition of an operation does not hold."""


class StateError(CarlemanLabError):
    """An object is not in a state that allows the requested operation."""


class CFLError(PreconditionError):
    """The time step violates the stability bound of the explicit scheme."""


class SimulationError(CarlemanLabError):
    """The time integration produced non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class SetupError(PreconditionError):
    """An observation setup violates the assumptions of the inverse problem."""


class InconsistencyError(CarlemanLabError):
    """Measured quantities contradict each other (e.g. 0/0 with nonzero data)."""


class ConfigError(CarlemanLabError):
    """The experiment configuration file is invalid."""
