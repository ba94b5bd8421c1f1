"""Exception types shared across the package."""


class PseudoHypError(Exception):
    """Base class for all package errors."""


class DomainError(PseudoHypError, ValueError):
    """A point lies outside the domain of a function or chart."""


class InvalidPoint(PseudoHypError, ValueError):
    """A vector fails the invariants of the type it is wrapped in."""


class InvalidSignature(PseudoHypError, ValueError):
    """A matrix does not preserve the expected bilinear form."""


class DegenerateStar(PseudoHypError):
    """The quadratic fit over a vertex star is rank deficient."""


class DisconnectedMesh(PseudoHypError):
    """Two mesh vertices are not joined by any path."""


class NonConvergence(PseudoHypError):
    """The maximal solver stalled above its residual tolerance."""


class SpacelikeViolation(PseudoHypError):
    """A solver step made the induced metric indefinite and backtracking failed."""


class InvalidBoundary(PseudoHypError, ValueError):
    """Boundary data is not unit valued or violates the Lipschitz margin."""


class BudgetExceeded(PseudoHypError):
    """An enumeration grew past its configured entry cap."""


class InsufficientData(PseudoHypError):
    """An estimator was asked for more than its input table can support."""


class NonCommuting(PseudoHypError):
    """A bending generator does not commute with the curve element."""


class BadPartition(PseudoHypError, ValueError):
    """Generator partition for bending is malformed."""


class NotSupported(PseudoHypError):
    """The requested signature is outside what the routine handles."""
