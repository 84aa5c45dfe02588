"""Exception hierarchy shared by all sorteq modules."""


class SortEqError(Exception):
    """Base class for every error raised by sorteq."""


class DomainError(SortEqError, ValueError):
    """Inputs fall outside the region where the model is defined."""


class ConvergenceError(SortEqError, RuntimeError):
    pass


class ModelOverflowError(SortEqError, OverflowError):
    """A log-quadratic firm quantity would overflow double precision."""


class QuadratureError(SortEqError, RuntimeError):
    pass


class InfeasibleMomentsError(DomainError):
    """A moment set cannot be generated by any admissible parameter vector."""


class PanelError(SortEqError, ValueError):
    """A panel is empty, inconsistent or violates the CSV schema."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ReplicateFailureError(SortEqError, RuntimeError):
    pass
