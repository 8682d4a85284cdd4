from typing import Optional


class QkdFilterError(Exception):
    """Base class for every failure raised by the calculators and the simulator."""


class DomainError(QkdFilterError, ValueError):
    pass


class NonConvergenceError(QkdFilterError):
    def __init__(self, message: str, partial_sum: float, index: int):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.index = index


class ToleranceNotMetError(QkdFilterError):
    def __init__(self, message: str, value: float, error: float):
        super().__init__(message)
        self.value = value
        self.error = error


class BudgetUnreachableError(QkdFilterError):
    def __init__(self, message: str, budget: float, cap: int):
        super().__init__(message)
        self.budget = budget
        self.cap = cap


class DimensionOverflowError(QkdFilterError, OverflowError):
    def __init__(self, message: str, log_value: float):
        super().__init__(message)
        self.log_value = log_value


class DimensionMismatchError(QkdFilterError):
    pass


class NotPositiveSemidefiniteError(QkdFilterError):
    pass


class IncompletePovmError(QkdFilterError):
    pass


class NotAProjectorError(QkdFilterError):
    pass


class ZeroProbabilityError(QkdFilterError):
    pass


class DegenerateDenominatorError(QkdFilterError):
    pass


class ComplementMembershipError(QkdFilterError):
    pass


class TensorBudgetError(QkdFilterError):
    pass


class DegenerateComplementError(QkdFilterError):
    pass


class VerificationError(QkdFilterError):
    """An inequality that must hold did not; carries both sides for the report."""

    def __init__(self, message: str, lhs: float, rhs: float, seed: Optional[int] = None, trial: Optional[int] = None):
        super().__init__(message)
        self.lhs = lhs
        self.rhs = rhs
        self.seed = seed
        self.trial = trial
