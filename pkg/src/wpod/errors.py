"""Exception types raised across the package."""


class WpodError(Exception):
    """Base class for all package errors."""


class InputError(WpodError, ValueError):
    """Invalid argument: wrong shape, non-finite data, out-of-range value."""


class NumericalDegeneracyError(WpodError, ArithmeticError):
    """A numerical procedure failed to converge or hit a singular system."""


class EmptyResultError(WpodError, ValueError):
    """An operation would produce an empty object (e.g. all weights zero)."""


class DuplicatePointError(WpodError, ValueError):
    """A parameter point is already present in the snapshot store."""


class RankError(WpodError, ValueError):
    """Requested basis size exceeds the available rank."""

    def __init__(self, requested, available):
        super().__init__(
            f"requested {requested} basis vectors but only {available} are available"
        )
        self.requested = requested
        self.available = available


class EmptyDataError(WpodError, ValueError):
    """Required snapshot data (e.g. derivative blocks) is missing."""


class DegenerateBasisError(WpodError, ArithmeticError):
    """The reduced operator built from a basis is singular."""
