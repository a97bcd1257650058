"""Exception hierarchy shared by all rbsde modules."""


class RBSDEError(Exception):
    """Base class for every error raised by this package."""


class InputError(RBSDEError, ValueError):
    """A call received arguments outside its documented domain."""


class ConfigurationError(RBSDEError, ValueError):
    """A scenario, tube or run configuration is invalid."""


class DomainError(ConfigurationError):
    """A domain slice is degenerate (empty, or with vanishing inradius)."""


class NumericalError(RBSDEError, ArithmeticError):
    """A numerical routine failed: non-finite values, non-convergence, rank loss."""

    def __init__(self, message, *, residual=None, step=None, path=None):
        super().__init__(message)
        self.residual = residual
        self.step = step
        self.path = path
