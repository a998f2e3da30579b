"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A run configuration violates a stability bound or schema constraint."""


class ContractViolation(RuntimeError):
    """An input breaks a documented precondition (e.g. mismatched seeds)."""


class ResolutionError(ValueError):
    """A grid is too coarse to resolve the requested object."""
