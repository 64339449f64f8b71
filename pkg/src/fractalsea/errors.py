"""Exception types shared across the toolkit."""


class FractalSeaError(Exception):
    """Base class for all toolkit errors."""


class DomainError(FractalSeaError, ValueError):
    """An argument is outside the documented domain of an operation."""


class ValidationError(FractalSeaError, ValueError):
    """A configuration or serialized artifact failed validation."""


class PlanError(FractalSeaError, ValueError):
    """A stitch plan is structurally invalid (e.g. cyclic dependencies)."""
