"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid user input: missing/malformed files, shape or label mismatches."""


class NumericalError(RuntimeError):
    """Numerical failure: non-finite intermediates, degenerate statistics."""
