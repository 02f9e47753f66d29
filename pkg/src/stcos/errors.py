"""Exception types shared across the engine."""


class StcosError(Exception):
    """Base class for all engine errors."""


class GeometryError(StcosError):
    """Malformed polygons, degenerate bounding boxes, invalid rings."""


class DomainError(StcosError):
    """Value outside a function's mathematical domain (zero areas, nonpositive variances)."""


class ConfigurationError(StcosError):
    """Inconsistent or invalid configuration (bad ranks, empty grids, misaligned rows)."""


class StabilityError(StcosError):
    """Dynamical system violates stationarity (spectral radius >= 1)."""


class LinearAlgebraError(StcosError):
    """Numerical linear-algebra failure (rank deficiency, non-PD conditionals)."""


class InputError(StcosError):
    """File-level parse or validation failure; message itemizes all offending records."""

    def __init__(self, message: str, items: list[str] | None = None):
        self.items = list(items or [])
        if self.items:
            message = message + "\n  " + "\n  ".join(self.items)
        super().__init__(message)


class ArtifactMismatchError(StcosError):
    """Fitted artifact does not match the configuration used for prediction."""
