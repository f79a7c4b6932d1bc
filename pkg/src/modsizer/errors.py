"""Exception types shared across the package."""


class ModsizerError(Exception):
    """Base class for all package errors."""


class SchemaError(ModsizerError):
    """Structured-input file violates the documented schema."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ValidationError(ModsizerError):
    """A loaded instance violates one or more domain invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class CycleError(ModsizerError):
    """Malformed drive-cycle input."""


class SimulationError(ModsizerError):
    """Forward simulation hit a power or energy limit."""


class InfeasibleDemandError(SimulationError):
    """Requested battery power exceeds what the pack can deliver."""


class PerformanceError(SimulationError):
    """Design point fails a static performance requirement."""


class SolverError(ModsizerError):
    """Conic solve did not reach an acceptable status."""
