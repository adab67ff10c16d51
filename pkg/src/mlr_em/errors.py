"""Exception types raised across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class DegenerateModelError(ValueError):
    """The ground truth (or an iterate) makes a quantity undefined."""


class IllConditionedError(RuntimeError):
    """The sample covariance cannot be solved reliably."""


class NumericalError(RuntimeError):
    """A numerical routine failed to bracket or converge."""
