"""Exception hierarchy.

Everything raised on bad input derives from :class:`CrowdFluxError` so the
command line can map it to exit code 2 in one place.
"""


class CrowdFluxError(Exception):
    """Base class for data errors."""


class BadMagic(CrowdFluxError):
    pass


class Truncated(CrowdFluxError):
    pass


class NonFiniteFlow(CrowdFluxError):
    pass


class InvalidConfig(CrowdFluxError):
    pass


class IndexOutOfRange(CrowdFluxError):
    pass


class GridTooFine(CrowdFluxError):
    pass


class DimensionMismatch(CrowdFluxError):
    pass


class DomainError(CrowdFluxError):
    pass


class InsufficientWords(CrowdFluxError):
    pass


class TokenMismatch(CrowdFluxError):
    pass


class PoolNotReady(CrowdFluxError):
    pass


class ModelMismatch(CrowdFluxError):
    pass


class EmptyTruth(CrowdFluxError):
    pass


class CoverageWarning(UserWarning):
    """Training stopped at ``s_max`` with uncovered words left over."""
