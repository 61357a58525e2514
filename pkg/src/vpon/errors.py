"""Exception types raised across the package."""


class VponError(Exception):
    """Base class for all package errors."""


class ParameterError(VponError, ValueError):
    """An argument is outside its valid domain."""


class OverloadError(VponError):
    """Offered work meets or exceeds channel capacity (rho >= 1)."""

    def __init__(self, rho, message=None):
        self.rho = rho
        super().__init__(message or f"slice overloaded: rho={rho:.4f} >= 1")


class TopologyError(VponError):
    """An RU cannot reach the MEC node it was assigned to."""


class LayoutError(VponError):
    """Layout generation or lookup failed."""


class ModelError(VponError):
    """The integer program cannot be built for the given inputs."""


class ScenarioError(VponError):
    """A scenario configuration file is malformed."""


class InfeasibleError(VponError):
    """No slice configuration satisfies the latency threshold.

    ``diagnostics`` holds the per-iteration records gathered before giving up.
    """

    def __init__(self, reason, diagnostics=(), iterations=0, cuts=0):
        self.reason = reason
        self.diagnostics = list(diagnostics)
        self.iterations = iterations
        self.cuts = cuts
        super().__init__(reason)
