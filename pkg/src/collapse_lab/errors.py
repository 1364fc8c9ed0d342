"""Exception hierarchy shared by all collapse-lab modules."""


class CollapseLabError(Exception):
    """Base class for all collapse-lab errors."""


class InvalidInputError(CollapseLabError, ValueError):
    """Input data violates a documented precondition or invariant."""


class NumericalError(CollapseLabError, RuntimeError):
    """A numerical procedure failed (divergence, stagnation, separation)."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its budget without reaching tolerance."""


class LinearSolverError(NumericalError):
    """The inner linear solve stagnated or reported failure."""


class SeparationError(NumericalError):
    """A forbidden node set disconnects the requested endpoints."""
