"""Exception types raised across the package."""


class MeshError(ValueError):
    """Invalid mesh input or mesh query."""


class AssemblyError(RuntimeError):
    """Finite-element assembly failed (e.g. degenerate or inverted element)."""


class SolverError(RuntimeError):
    """Linear or nonlinear solver failure; carries iteration history."""

    def __init__(self, message, iterations=None, residuals=None):
        super().__init__(message)
        self.iterations = iterations
        self.residuals = list(residuals) if residuals is not None else []


class StepRejectedError(RuntimeError):
    """A mesh-update step was rejected; the mesh was rolled back."""

    def __init__(self, message, offending_nodes=(), offending_elements=()):
        super().__init__(message)
        self.offending_nodes = list(offending_nodes)
        self.offending_elements = list(offending_elements)


class ConfigError(ValueError):
    """Malformed case configuration."""
