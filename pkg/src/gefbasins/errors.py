"""Exception types shared across the package.

Every error carries a short ``category`` string; the command line echoes it
on stderr so that scripts can branch on it.
"""


class GefError(Exception):
    """Base class for every domain error raised by the package."""

    category = "domain"


class DomainError(GefError, ValueError):
    """Evaluation requested outside the certified disk, or at a zero of f."""

    category = "domain"


class CapacityError(GefError):
    """A configured size limit or a storage capacity was exceeded."""

    category = "capacity"


class InconsistencyError(GefError):
    """Two independent counts of the same quantity disagree."""

    category = "inconsistency"


class DegenerateCriticalPointError(GefError):
    """A critical point with ``|hessian_det|`` below the degeneracy floor."""

    category = "degenerate"

    def __init__(self, message, locations=()):
        super().__init__(message)
        self.locations = list(locations)


class IntegrationError(GefError):
    """Step size underflow: the field is singular with no listed zero nearby."""

    category = "integration"

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class AssignmentError(GefError):
    """A gradient curve did not terminate at a sink."""

    category = "assignment"

    def __init__(self, message, terminal=None):
        super().__init__(message)
        self.terminal = terminal


class RegionNotContainedError(GefError):
    """Points of a region flowed to different sinks."""

    category = "region"


class TessellationQualityError(GefError):
    """Too many grid nodes could not be assigned to a sink."""

    category = "quality"


class MalformedPartitionError(GefError):
    """A pixel partition violates its structural invariants."""

    category = "partition"


class ConservationError(GefError):
    """The cut-off changed a region's pixel count; the diff is attached."""

    category = "conservation"

    def __init__(self, message, diff=None):
        super().__init__(message)
        self.diff = diff or {}


class FormatError(GefError):
    """Bad magic, version, or truncated payload in a binary grid file."""

    category = "format"


class EnsembleAbortError(GefError):
    """More ensemble samples failed than the failure budget allows."""

    category = "ensemble"
