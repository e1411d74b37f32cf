"""Exception types raised across the package."""


class CMAError(Exception):
    """Base class for all package errors."""


class DegenerateMetricError(CMAError):
    """A metric matrix is singular or too badly conditioned to invert."""


class PreconditionError(CMAError, ValueError):
    """An operation was called on inputs violating its stated precondition."""


class UnsupportedOperationError(CMAError):
    """The operation is not defined for this kind of grid."""


class ConsistencyError(CMAError):
    """An internal consistency check failed (e.g. a non-negligible imaginary residue)."""


class InadmissibleError(CMAError):
    """A field is not admissible where admissibility is required."""


class InputRejected(CMAError, ValueError):
    """Problem data rejected before solving (failed subsolution or compatibility check)."""


class EndpointsTooWildError(InputRejected):
    """No subsolution constant K up to the search limit made the lifted problem strict."""
