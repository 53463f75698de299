"""Exception hierarchy shared by all robustgne modules."""


class RobustGNEError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RobustGNEError, ValueError):
    """Array shapes disagree with the object they are applied to."""


class GeometryError(RobustGNEError, ValueError):
    """Invalid or degenerate geometric input (zero direction, coincident vertices, ...)."""


class GraphError(RobustGNEError, ValueError):
    """Communication graph violates symmetry, sign or connectivity requirements."""


class ProjectionError(RobustGNEError):
    """Iterative projection hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=float("nan"), point=None):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual
        self.point = point


class DivergenceError(RobustGNEError):
    """Simulated dynamics left the ball of radius ``limit``."""

    def __init__(self, message, time=float("nan"), state=None):
        super().__init__(message)
        self.time = time
        self.state = state


class ConfigError(RobustGNEError):
    """Scenario configuration failed validation.

    ``diagnostics`` is a list of ``(field, message)`` pairs, one per problem found.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = [f"{field}: {msg}" for field, msg in self.diagnostics]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
