"""Exception hierarchy shared by all modules."""


class KPPError(Exception):
    """Base class for every error raised by kppspeed."""


class ParameterError(KPPError, ValueError):
    """A physical or numerical parameter is out of its admissible range."""


class GridError(KPPError, ValueError):
    """A grid is too coarse or two objects live on different grids."""


class SolvabilityError(KPPError, ValueError):
    """The Neumann cell problem has a source with nonzero mean."""


class SolverError(KPPError, RuntimeError):
    """An iterative solver failed to converge.

    The ``diagnostics`` mapping carries whatever the solver knew when it gave up
    (iteration counts, last iterate, residuals).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DomainError(KPPError, ValueError):
    """Input data outside the domain of a transformation (e.g. log of a non-positive)."""


class EnsembleError(KPPError, RuntimeError):
    """Too many realizations failed inside an ensemble run."""


class SimulationError(KPPError, RuntimeError):
    """Direct PDE simulation failed (front lost, CFL violated, speed not settled)."""
