"""Exception hierarchy with stable process exit codes."""
from __future__ import annotations

__all__ = [
    "GroundCtlError",
    "ValidationError",
    "DimensionError",
    "DomainError",
    "HypothesisViolation",
    "RankConditionError",
    "PreconditionError",
    "UnsupportedClosedForm",
    "SolverError",
    "QuadratureError",
    "ConditioningError",
    "IntegrationError",
    "DivergenceError",
    "LoopFailure",
    "StepSizeError",
    "EXIT_OK",
    "EXIT_VALIDATION",
    "EXIT_HYPOTHESIS",
    "EXIT_SOLVER",
    "EXIT_INTEGRATION",
]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_HYPOTHESIS = 3
EXIT_SOLVER = 4
EXIT_INTEGRATION = 5


class GroundCtlError(Exception):
    """Base class; ``exit_code`` is what the CLI returns."""

    exit_code = 1


class ValidationError(GroundCtlError, ValueError):
    """Malformed input: configuration, shapes, out-of-range parameters."""

    exit_code = EXIT_VALIDATION


class DimensionError(ValidationError):
    """Array shapes do not match the eigensystem truncation."""


class DomainError(ValidationError):
    """A scalar argument lies outside its admissible range."""


class UnsupportedClosedForm(ValidationError):
    """No closed-form coupling coefficient exists for this problem kind."""


class HypothesisViolation(GroundCtlError):
    """A structural assumption of the control theory does not hold."""

    exit_code = EXIT_HYPOTHESIS


class RankConditionError(HypothesisViolation):
    """A coupling coefficient with the ground state vanishes.

    Parameters
    ----------
    index : int
        Mode label ``k`` whose coefficient is (numerically) zero.
    value : float
        The offending coefficient.
    """

    def __init__(self, index: int, value: float):
        self.index = int(index)
        self.value = float(value)
        super().__init__(
            f"rank condition fails at mode k={self.index}: coupling {self.value:.3e}"
        )


class PreconditionError(HypothesisViolation):
    """The initial state lies outside the region a routine can handle."""


class SolverError(GroundCtlError):
    """A numerical solver did not reach its target accuracy."""

    exit_code = EXIT_SOLVER


class QuadratureError(SolverError):
    """Adaptive quadrature did not converge.

    Parameters
    ----------
    achieved : float
        Error estimate actually reached.
    """

    def __init__(self, message: str, achieved: float):
        self.achieved = float(achieved)
        super().__init__(f"{message} (achieved error {self.achieved:.3e})")


class ConditioningError(SolverError):
    """The moment system is too ill-conditioned for the requested residual."""

    def __init__(self, message: str, residual: float):
        self.residual = float(residual)
        super().__init__(f"{message} (achieved residual {self.residual:.3e})")


class LoopFailure(SolverError):
    """A stage of the feedback loop failed; ``trace`` holds completed stages."""

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)


class DivergenceError(LoopFailure):
    """The stage error grew instead of contracting."""


class IntegrationError(GroundCtlError):
    """Time integration could not meet its tolerance."""

    exit_code = EXIT_INTEGRATION

    def __init__(self, message: str, achieved: float = float("nan")):
        self.achieved = float(achieved)
        super().__init__(f"{message} (achieved {self.achieved:.3e})")


class StepSizeError(IntegrationError):
    """The SDE step is too coarse for the reflection scheme."""
