"""Exception types shared across the package.

Every failure mode that a caller can sensibly react to gets its own class;
all inherit from CkymError so the CLI can map them to exit codes in one place.
"""


class CkymError(Exception):
    """Base class for all package errors."""


class InvalidInput(CkymError):
    """Bad user-supplied data (config, polytope spec, state file)."""


class NonDelzant(InvalidInput):
    """Vertex normals fail the unimodularity test."""


class Unbounded(InvalidInput):
    """Facet data does not cut out a bounded region."""


class MissingTrace(InvalidInput):
    """boundary_flux called without a trace value for some facet."""


class ClassMismatch(InvalidInput):
    """Two states expected to share polytope/bundle/class do not."""


class ConfigError(InvalidInput):
    """Run configuration failed validation."""


class CorruptState(InvalidInput):
    """State file failed to parse or its invariants are violated."""


class NotPositiveDefinite(CkymError):
    """Metric Hessian lost positivity at some node (left the Kaehler cone)."""

    def __init__(self, node, detail=""):
        self.node = node
        super().__init__(f"Hessian not positive definite at node {node} {detail}")


class NegativeNorm(CkymError):
    """Pointwise curvature norm came out below -1e-10: convention bug."""

    def __init__(self, node, value):
        self.node = node
        self.value = value
        super().__init__(f"|F|^2 = {value} < 0 at node {node}")


class NotAtHYM(CkymError):
    """adjoint_check called at a state that is not a HYM solution."""


class SingularJacobian(CkymError):
    """Newton matrix singular beyond the known kernel."""

    def __init__(self, detail=""):
        super().__init__(f"singular Jacobian: {detail}")


class MaxIterations(CkymError):
    """Newton iteration budget exhausted without convergence."""

    def __init__(self, detail="", report=None):
        self.report = report
        super().__init__(
            f"Newton did not converge within the iteration budget: {detail}"
        )


class LeftKaehlerCone(CkymError):
    """Line search could not restore metric positivity."""


class StepUnderflow(CkymError):
    """Continuation step shrank below the minimum step size."""

    def __init__(self, detail="", last_good=None):
        self.last_good = last_good
        super().__init__(f"continuation step underflow: {detail}")


class StepBudgetExhausted(CkymError):
    """Gradient flow ran out of steps before reaching its tolerance."""

    def __init__(self, detail="", trajectory=None):
        self.trajectory = trajectory
        super().__init__(f"gradient flow step budget exhausted: {detail}")


class ShootingDiverged(CkymError):
    """Geodesic boundary-value solve failed to converge."""


class LeavesCone(CkymError):
    """Interpolated metric path degenerates at some time sample."""

    def __init__(self, t):
        self.t = t
        super().__init__(f"metric path leaves the Kaehler cone at t = {t}")


class PathTooCoarse(CkymError):
    """Time discretization too coarse for meaningful energy differences."""
