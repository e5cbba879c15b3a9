"""Exception types raised across amprlab."""


class InvalidArgument(ValueError):
    """An input violates an operation's preconditions."""


class DivergenceError(RuntimeError):
    """An iterative solver produced a non-finite iterate.

    ``state`` holds the last state whose iterates were all finite.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class InfeasibleDomain(RuntimeError):
    """No start point of an optimization produced a feasible objective."""


class InvalidStart(ValueError):
    """Objective is non-finite at every vertex of the initial simplex."""


class DegenerateSample(ValueError):
    """A sample is constant, so a distributional fit is undefined."""
