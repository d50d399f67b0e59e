"""Exception and warning types shared across the package."""


class OutOfRangeError(ValueError):
    """A value fell outside the range where it can be represented numerically.

    ``index`` carries the offending observation position when the failure
    happened inside a vectorised evaluation over a series.
    """

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (observation index {index})"
        super().__init__(message)
        self.index = index


class SimulationError(RuntimeError):
    """A simulated path produced a non-finite value."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} at step {index}"
        super().__init__(message)
        self.index = index


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge."""


class TailClampWarning(RuntimeWarning):
    """Probabilities were clamped away from 0/1 before a quantile inversion."""


class AstronomicalPassageWarning(RuntimeWarning):
    """A mean passage time integral reached far into the base-process tails."""
