class InputError(ValueError):
    """Raised when a caller passes arguments that violate an operation's preconditions."""


class UnreachableError(RuntimeError):
    """Raised when a planner cannot connect the requested start and goal."""


class InvariantError(RuntimeError):
    """Internal consistency check failed; indicates a bug rather than bad input."""
