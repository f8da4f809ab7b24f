"""Exception hierarchy shared by all solver modules."""

from __future__ import annotations


class WeakOTError(Exception):
    """Base class for every error raised by :mod:`weakot`."""


class InputError(WeakOTError, ValueError):
    """Malformed or inconsistent input data."""


class DimensionMismatch(InputError):
    pass


class SupportMismatch(InputError):
    pass


class NumericalFailure(WeakOTError):
    """An inner numerical routine (typically an LP) failed to terminate cleanly."""


class InstanceTooLarge(WeakOTError):
    pass


class MissingLipschitzBound(WeakOTError):
    pass


class ConvergenceFailure(WeakOTError):
    """Iteration cap reached before the requested tolerance.

    The best iterate found so far is attached as ``result`` so callers can
    still inspect or use it.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class PostconditionFailure(WeakOTError):
    """A certified result failed one of its own post-checks."""

    def __init__(self, message: str, failed=(), result=None):
        super().__init__(message)
        self.failed = tuple(failed)
        self.result = result
