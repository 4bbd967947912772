"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class FormatError(ValueError):
    """A file is readable but its header or payload is malformed."""


class DegenerateRunError(RuntimeError):
    """Too many realizations of a run were degenerate to produce a result."""
