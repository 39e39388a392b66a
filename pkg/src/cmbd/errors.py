"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """An operation was called outside its stated domain."""


class DomainError(ValueError):
    """An evaluation point is outside the mathematical domain (e.g. z=0 with positive support)."""


class ConditioningError(RuntimeError):
    """A linear solve was rejected because the system is too ill-conditioned."""


class AmbiguityError(RuntimeError):
    """A discrete parameter (e.g. an integer shift) cannot be resolved uniquely."""


class BudgetExceededError(RuntimeError):
    """A combinatorial computation would exceed its configured budget."""
