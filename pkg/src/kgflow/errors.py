"""Exception types shared across the package."""


class KGFlowError(Exception):
    """Base class for all package errors."""


class GridMismatchError(KGFlowError):
    """Operands live on different grids."""


class ZeroModeSingularity(KGFlowError):
    """A homogeneous symbol is singular at xi=0 while the zero mode carries mass."""


class RangeError(KGFlowError):
    """A dyadic block index lies outside the resolved range of the bank."""


class CoverageError(KGFlowError):
    """A requested time interval is not covered by the stored samples."""


class ContractionFailure(KGFlowError):
    """The Picard iteration expanded for several consecutive sweeps.

    Carries the measured per-iterate contraction factors so callers can see
    how far outside the small-data regime the input was.
    """

    def __init__(self, message, factors):
        super().__init__(message)
        self.factors = list(factors)


class AliasError(KGFlowError):
    """A rescaled field is not representable on the lattice without aliasing."""


class OrthogonalityError(KGFlowError):
    """Parameter tracks fail the pairwise divergence precondition."""


class InvalidStatus(KGFlowError):
    """A trajectory with the wrong status was passed to an analysis routine."""


class SnapshotFormatError(KGFlowError):
    """A binary field snapshot is malformed."""
