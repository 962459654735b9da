"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An argument broke a documented precondition (e.g. index out of range)."""


class ConfigurationError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class EnumerationCapError(RuntimeError):
    """An exact-enumeration routine refused to run past its size cap."""


class TrainingDivergedError(RuntimeError):
    """Parameters became non-finite during training."""
