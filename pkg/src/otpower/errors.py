"""Exception types raised across the package."""


class DimensionMismatchError(ValueError):
    """A vector or matrix does not match the tensor dimension."""


class BudgetExceededError(ValueError):
    """Allocation would exceed the configured element budget."""

    def __init__(self, requested: int, limit: int):
        self.requested = requested
        self.limit = limit
        super().__init__(
            f"tensor needs {requested} elements, above the element budget of {limit}"
        )


class DegenerateUpdateError(RuntimeError):
    """A power-iteration contraction collapsed to (numerically) zero."""


class ExtractionError(RuntimeError):
    """Every restart of the power method failed."""


class HypothesisError(ValueError):
    """A configuration falls outside the recovery-guarantee hypotheses."""


class NonUnitQueryWarning(UserWarning):
    """A backend query received a vector that was not unit norm."""


class RankMismatchError(ValueError):
    """Truth and estimates hold different numbers of components."""
