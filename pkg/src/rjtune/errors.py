class NumericalGuardError(ValueError):
    """A computation was refused because it would be numerically unsound."""


class BudgetExceededError(RuntimeError):
    """Estimated cost of a job exceeds the allowed budget."""
