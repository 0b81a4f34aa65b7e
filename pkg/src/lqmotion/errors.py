"""Exception hierarchy for lqmotion."""


class LqMotionError(Exception):
    """Base class for all lqmotion errors."""


class DimensionMismatch(LqMotionError):
    """Problem matrices have inconsistent shapes."""


class ProblemFileError(LqMotionError):
    """A problem file could not be parsed; message carries a field diagnostic."""


class NotControllable(LqMotionError):
    """The (A, B) pair fails the controllability rank test."""


class ChainCouplingError(LqMotionError):
    """Transformed cost couples different integrator chains.

    The per-chain scalar pivot reduction requires the stacked cost matrix to be
    block-separable across chains.
    """


class DependentActiveSet(LqMotionError):
    """Active constraint rows are linearly dependent."""


class InfeasibleActiveSet(LqMotionError):
    """Active constraint rows pin contradictory equalities."""


class UnsupportedActiveSet(LqMotionError):
    """Active rows have a structure the arc machinery does not derive."""


class DegenerateOde(LqMotionError):
    """All coefficients of a primitive ODE vanish."""


class UnderdeterminedMultipliers(LqMotionError):
    """Active rows never reach the controls, so multipliers cannot be resolved."""


class NoControlAuthority(LqMotionError):
    """Constraint derivatives never reach the control within n steps."""


class SingularBoundarySystem(LqMotionError):
    """Boundary-condition linear system is singular; carries the condition number."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class CountMismatch(LqMotionError):
    """Junction system unknown/equation counts do not balance."""

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown or {}


class NoRoot(LqMotionError):
    """No junction time produced a sign change of the matching residual."""


class IllConditioned(LqMotionError):
    """Inner junction solve exceeded the condition-number budget."""


class OutOfHorizon(LqMotionError):
    """Evaluation time lies outside [0, T]."""


class QpInfeasible(LqMotionError):
    """The collocation quadratic program is infeasible."""


class RiccatiFailure(LqMotionError):
    """No stabilizing solution of the algebraic Riccati equation."""


class HeuristicExhausted(LqMotionError):
    """Violation-driven sequencing hit its iteration cap without a feasible fix."""
