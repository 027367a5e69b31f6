"""Exception hierarchy shared by the solver modules."""


class GrushinMfgError(Exception):
    """Base class for all library errors."""


# --- geometry ---------------------------------------------------------------

class NonIsolatedRoot(GrushinMfgError):
    """Another zero of h lies inside the probe radius of the queried root."""


class SlopeUnstable(GrushinMfgError):
    """Dyadic log-log slope estimates do not settle near an integer."""


class OutOfDomain(GrushinMfgError):
    """A queried point lies outside the truncated computational box."""


class BallTouchesBoundary(GrushinMfgError):
    """A metric ball reaches the truncation boundary, volume would be clipped."""


class DegeneratePair(GrushinMfgError):
    """All sampled point pairs coincide, no Holder quotient can be formed."""


# --- measures ---------------------------------------------------------------

class GridMismatch(GrushinMfgError):
    """Two measures or fields do not live on the same grid."""


class NotNormalized(GrushinMfgError):
    """Cell weights are negative or do not integrate to one."""


# --- solvers ----------------------------------------------------------------

class SolverDiverged(GrushinMfgError):
    """An iterative linear solve exceeded its iteration cap."""


class PositivityLost(GrushinMfgError):
    """The Hopf variable w dropped below its guaranteed lower barrier."""


class CflViolated(GrushinMfgError):
    """Explicit advective CFL number exceeded 0.5."""


class NegativeDensity(GrushinMfgError):
    """A density slice went negative beyond round-off, scheme or CFL bug."""


class OrderViolated(GrushinMfgError):
    """A sub/supersolution pair lost its ordering."""


class FeedbackOutOfDomain(GrushinMfgError):
    """A particle asked for feedback outside the interpolable domain."""


class NotConverged(GrushinMfgError):
    """Fixed-point loop hit its iteration cap; best iterate attached.

    The partially converged solution is available as ``exc.solution``.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class ConfigMismatch(GrushinMfgError):
    """Two solutions being certified were produced from different configs."""


class AssumptionViolated(GrushinMfgError):
    """A standing assumption check failed during config validation."""

    def __init__(self, name, detail):
        super().__init__(f"{name}: {detail}")
        self.name = name
        self.detail = detail
