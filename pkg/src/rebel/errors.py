"""Exception hierarchy.

Every error raised by the library derives from :class:`RebelError`, so
callers (the CLI, the Monte Carlo harness) can map failures to exit codes
or failure tallies without catching unrelated exceptions.
"""


class RebelError(Exception):
    """Base class for all library errors."""


class ValidationError(RebelError, ValueError):
    """Invalid model definition or argument."""


class NoRegeneration(RebelError):
    """Too few regeneration times to form a complete block.

    ``visits`` is the number of regeneration times actually found.
    """

    def __init__(self, message, visits=0):
        super().__init__(message)
        self.visits = visits


class DegenerateDensity(RebelError):
    """Transition density cannot be estimated (constant path)."""


class NoViableSmallSet(RebelError):
    """No candidate small set has a positive minorization constant."""


class OrderTestInconclusive(RebelError):
    """Order heuristic ran out of blocks before accepting an order.

    ``partial`` holds the per-order results computed so far.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or []


class NotEnoughBlocks(RebelError):
    """Fewer blocks than the empirical likelihood program requires."""


class SingularVariance(RebelError):
    """Block second-moment matrix is singular."""


class EstimateNotConverged(RebelError):
    """Outer optimisation over the parameter failed within budget.

    ``best`` holds the best iterate found.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class EmptyRegion(RebelError):
    """The confidence region is empty on the searched bounds."""


class DegreesOfFreedomZero(RebelError):
    """Over-identification test requested for a just-identified model."""
