"""Exception hierarchy for cavi_mf."""


class CaviError(Exception):
    """Base class for all errors raised by this package."""


# potentials
class NotSymmetric(CaviError, ValueError):
    pass


class NotPositiveDefinite(CaviError, ValueError):
    pass


class IndexOutOfRange(CaviError, IndexError):
    pass


class DuplicatePair(CaviError, ValueError):
    pass


class DimensionMismatch(CaviError, ValueError):
    pass


class NonPositiveSigma(CaviError, ValueError):
    pass


class NonFiniteInput(CaviError, ValueError):
    pass


# marginals
class NonFiniteLogDensity(CaviError, ValueError):
    pass


class BoundaryMass(CaviError):
    """Density does not decay inside the grid window; the window must be widened."""


class UOutOfRange(CaviError, ValueError):
    pass


# engine
class GridOverflow(CaviError):
    pass


class NonFiniteIntegrand(CaviError, FloatingPointError):
    pass


class ParseError(CaviError, ValueError):
    pass


# diagnostics
class MissingConstants(CaviError, ValueError):
    pass


class BackendMismatch(CaviError, ValueError):
    pass


class MissingLogPartition(CaviError, ValueError):
    pass


class MissingEnvelope(CaviError, ValueError):
    pass
