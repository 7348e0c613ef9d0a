"""Exception hierarchy shared by all gridbench modules."""


class GridbenchError(Exception):
    """Base class for every error raised by the package."""


class CaseFormatError(GridbenchError):
    """A case or data file could not be parsed."""


class GridValidationError(GridbenchError):
    """A grid description violates a structural invariant."""


class IslandingError(GridbenchError):
    """Removing a line splits the network into islands."""


class SingularMatrixError(GridbenchError):
    """The reduced susceptance matrix could not be factored."""


class UnbalancedInjectionError(GridbenchError):
    """Nodal injections do not sum to zero."""


class InvalidRangeError(GridbenchError):
    """A numeric parameter is outside its admissible range."""


class EmptyInputError(GridbenchError):
    """An operation received no data to work on."""


class UnknownLineError(GridbenchError):
    """A referenced line id does not exist in the grid or assignment."""


class DimensionMismatchError(GridbenchError):
    """Array shapes of a program or trajectory are inconsistent."""


class NonConvexError(GridbenchError):
    """A quadratic objective has a negative curvature entry."""


class ShapeMismatchError(GridbenchError):
    """A stored trajectory does not match the run configuration."""


class MissingScenarioError(GridbenchError):
    """A trajectory bundle lacks a requested (s_T, s_D) scenario."""


class ZeroBaselineCostError(GridbenchError):
    """The baseline cost is not positive, so a relative cost error is undefined."""


class ScenarioInfeasibleError(GridbenchError):
    """The look-ahead DCOPF has no feasible solution in some window."""

    def __init__(self, window: int, message: str = ""):
        self.window = window
        super().__init__(message or f"DCOPF infeasible at window t={window}")
