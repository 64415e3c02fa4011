"""Exception types shared across the package."""


class ConboError(Exception):
    """Base class for all package errors."""


class InputError(ConboError, ValueError):
    """Raised when arguments violate a documented precondition."""


class NumericalError(ConboError, RuntimeError):
    """Raised when a numerical routine fails beyond recovery (e.g. a Gram
    matrix that stays indefinite after jitter escalation)."""


class StateError(ConboError, RuntimeError):
    """Raised when an operation is called on an object in the wrong state,
    such as querying an unfitted model or asking twice without telling."""


class EvaluationFailure(ConboError, RuntimeError):
    """Raised by evaluators when a black-box evaluation fails (e.g. training
    diverged). The optimizer can absorb this into a failure constraint."""


class ConfigError(ConboError, ValueError):
    """Raised for malformed or inconsistent run configurations."""
