"""Exception types shared across the package."""


class MplmError(Exception):
    """Base class for all errors raised by this package."""


class StructuralViolationError(MplmError, ValueError):
    """A production/destruction evaluation breaks the required sign or
    transpose structure (negative rate, nonzero diagonal, P != D^T)."""


class InvalidInitialStateError(MplmError, ValueError):
    """Initial state has a negative component or is identically zero."""


class GridError(MplmError, ValueError):
    """Inconsistent time or space grid (horizon not an integer multiple of
    the step size, cell count too small, ...)."""


class PwdViolationError(MplmError, RuntimeError):
    """A Patankar weight denominator came out non-positive.  The embedding
    construction makes this impossible for valid inputs, so hitting it
    signals an internal bug or corrupted user input."""


class NumericError(MplmError, RuntimeError):
    """NaN/Inf encountered, a linear solve failed, or a solve produced
    negativity beyond the round-off clamping threshold."""


class StartupError(MplmError, RuntimeError):
    """Starting values could not be computed positively within the maximum
    refinement depth."""


class ReferenceSolutionError(MplmError, RuntimeError):
    """Self-convergence check of a numerically computed reference failed."""


class MetricError(MplmError, ValueError):
    """An error metric is undefined for the given trajectories (grid
    mismatch, zero denominator)."""
