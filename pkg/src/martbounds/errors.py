"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` used by the CLI.
"""


class MartboundsError(Exception):
    code = "ERROR"


class DomainError(MartboundsError, ValueError):
    """An argument lies outside the region where a formula is stated."""

    code = "DOMAIN_ERROR"

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class EvaluationError(MartboundsError, ArithmeticError):
    """A caller-supplied function returned a negative or non-finite value."""

    code = "EVALUATION_ERROR"


class OptimizationError(MartboundsError, ArithmeticError):
    code = "OPTIMIZATION_ERROR"

    def __init__(self, lam, message="non-finite exponent"):
        self.lam = lam
        super().__init__(f"{message} at lambda={lam!r}")


class ConsistencyError(MartboundsError, ValueError):
    code = "CONSISTENCY_ERROR"


class ConfigurationError(MartboundsError, ValueError):
    code = "CONFIGURATION_ERROR"


class PartialResultError(MartboundsError, RuntimeError):
    """Raised when a Monte Carlo run stops early; keeps the completed work."""

    code = "PARTIAL_RESULT"

    def __init__(self, completed, hits, cause):
        self.completed = completed
        self.hits = hits
        self.cause = cause
        super().__init__(f"stopped after {completed} trials ({hits} hits): {cause!r}")
