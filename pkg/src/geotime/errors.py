"""Exception hierarchy; the CLI maps each family to an exit code."""


class GeotimeError(Exception):
    """Base class for all package errors."""


class ConfigError(GeotimeError):
    """Malformed or inconsistent configuration (exit code 2)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(GeotimeError):
    """Unreadable or inconsistent dataset file (exit code 3)."""


class DomainError(GeotimeError, ValueError):
    """A query outside the region where an operation is defined."""


class IntegrationError(GeotimeError):
    """The geodesic integrator could not make progress."""


class OracleError(GeotimeError):
    """A distance oracle failed to converge."""


class ConvexityError(DomainError):
    """Requested collar width destroys convexity or admissibility."""

    def __init__(self, message, max_admissible):
        self.max_admissible = max_admissible
        super().__init__(message)


class PipelineError(GeotimeError):
    """A reconstruction stage failed globally (exit code 4)."""
