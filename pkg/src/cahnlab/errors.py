"""Exception types shared across the package."""


class GridMismatch(ValueError):
    """Two objects combined in one operation live on different grids."""


class EpsTooSmall(ValueError):
    """Kernel radius is not resolved by at least two cells."""


class EpsTooLarge(ValueError):
    """Kernel scale is not below half the torus period."""


class CflViolation(RuntimeError):
    """A finite-volume step produced a negative density."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"{message} (t={time:.17g})")
        self.time = time


class NonConvergence(RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    ``best`` carries the best iterate found so far.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
