"""Exception hierarchy shared by all modules."""


class GraphLMSError(Exception):
    """Base class for every error raised by the package."""


class PreconditionError(GraphLMSError, ValueError):
    """An input violates the documented precondition of an operation."""


class DegenerateDegreeError(PreconditionError):
    """A normalized shift was requested on a graph with a zero-degree node."""


class DisconnectedGraphError(PreconditionError):
    pass


class UnstableError(GraphLMSError):
    """A recursion that must be stable (spectral radius < 1) is not."""


class ConvergenceError(GraphLMSError, ArithmeticError):
    """An iterative numeric routine did not reach its tolerance."""


class ConfigError(GraphLMSError, ValueError):
    pass


class DatasetError(GraphLMSError, ValueError):
    pass


class DivergenceError(GraphLMSError):
    """Every Monte-Carlo run of a variant diverged."""
