"""Exception hierarchy shared by every module."""


class SteinError(Exception):
    """Base class for all errors raised by steinkit."""


class DomainError(SteinError, ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(SteinError, ValueError):
    """A documented precondition of an operation does not hold."""


class ResourceError(SteinError, RuntimeError):
    """An exact enumeration or convolution would exceed its size budget.

    Callers should fall back to a sampled computation, or shrink the problem.
    """


class WindowError(SteinError, IndexError):
    """A lookup falls outside the stored window of a tabulated function."""
