"""Exception hierarchy."""


class RadGraphError(Exception):
    """Base class for all library errors."""


class GridError(RadGraphError, ValueError):
    """Unsupported dimensions, resolutions or connection data."""


class CurvatureError(RadGraphError, ValueError):
    """Invalid curvature specification or data."""


class SolverError(RadGraphError):
    """Base class for solver failures.

    ``report`` carries the partial :class:`~radgraph.solvers.SolveReport`
    when one exists.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonConvergence(SolverError):
    pass


class AdmissibilityLoss(SolverError):
    pass


class SingularLinearization(SolverError):
    pass


class PathFailure(SolverError):
    pass


class FixedPointStall(SolverError):
    pass


class BarrierViolation(SolverError):
    pass


class NoBracket(RadGraphError, ValueError):
    pass


class DegenerateMesh(RadGraphError):
    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = list(indices)


class ConfigError(RadGraphError, ValueError):
    """Configuration parse or validation failure.

    ``problems`` lists every violated constraint.
    """

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)
