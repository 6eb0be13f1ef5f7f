"""Exception types shared across the package.

Every error raised on a contract violation derives from ReconError so callers
can catch the package's failures with one except clause while still getting
ValueError/RuntimeError semantics from the standard hierarchy.
"""

from __future__ import annotations


class ReconError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(ReconError, ValueError):
    """Scanner or image geometry is inconsistent or unphysical."""


class ShapeError(ReconError, ValueError):
    """An array has the wrong shape or a degenerate dimension."""


class SubsetError(ReconError, ValueError):
    """Subset partition request is invalid (count, divisibility, index)."""


class PhantomError(ReconError, ValueError):
    """Phantom definition or phantom file is invalid."""


class SimulationError(ReconError, ValueError):
    """Simulation specification is invalid (fractions, counts, widths)."""


class DomainError(ReconError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigError(ReconError, ValueError):
    """A configuration value violates a documented constraint."""


class ValidationError(ReconError, ValueError):
    """Experiment config validation failed; carries every violation found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__(
            "invalid experiment config:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )


class NumericalError(ReconError, RuntimeError):
    """A non-finite value appeared during iteration; names the (k, i) site."""

    def __init__(self, message: str, iteration: int, subiteration: int):
        self.iteration = iteration
        self.subiteration = subiteration
        super().__init__(f"{message} (iteration k={iteration}, subiteration i={subiteration})")


class ReferenceMissingError(ReconError, FileNotFoundError):
    """A converged reference image is required but absent or mismatched."""


class CacheError(ReconError, ValueError):
    """A system-matrix cache file is malformed or does not match the geometry."""


class MetricError(ReconError, ValueError):
    """A figure of merit was requested on degenerate input (zero norms)."""
