"""Exception hierarchy for the toolkit.

Three families map onto the CLI exit codes: file/format problems (exit 2),
input validation problems (exit 3), and domain errors raised by otherwise
valid inputs (exit 4).
"""


class AirwayError(Exception):
    """Base class for all toolkit errors."""


# --- file / format errors (CLI exit 2) ---

class FileFormatError(AirwayError):
    """Base for on-disk format problems."""


class MissingHeaderKeyError(FileFormatError):
    """A required MHD header key is absent."""


class UnsupportedElementTypeError(FileFormatError):
    """MHD ElementType outside the supported set."""


class SizeMismatchError(FileFormatError):
    """Declared DimSize disagrees with the raw payload byte count."""


class IoFailureError(FileFormatError):
    """Underlying read/write failed."""


# --- validation errors (CLI exit 3) ---

class ValidationError(AirwayError):
    """Base for bad arguments to an operation."""


class RoleMismatchError(ValidationError):
    """Volume role differs from what the operation requires."""


class ShapeMismatchError(ValidationError):
    """Volume/grid shapes disagree."""


class IndexOutOfBoundsError(ValidationError):
    """Voxel index outside the volume."""


class NonSquarePlaneError(ValidationError):
    """rotate90 requires equal extents in the rotation plane."""


class InvalidProbabilityError(ValidationError):
    """Probability parameter outside its valid range."""


class NonPositiveDilationError(ValidationError):
    """Dilation rates must be positive integers."""


class NonFiniteInputError(ValidationError):
    """A scalar input is NaN or infinite."""


# --- domain errors (CLI exit 4) ---

class DomainError(AirwayError):
    """Base for errors arising from valid-but-degenerate inputs."""


class EmptyMaskError(DomainError):
    """Binary mask has no foreground."""


class EmptyGraphError(DomainError):
    """Skeleton graph has no nodes."""


class CyclicSkeletonError(DomainError):
    """Skeleton graph contains a cycle; branch decomposition is undefined."""


class EmptyTableError(DomainError):
    """Branch table has no branches."""


class NoBranchesError(DomainError):
    """Label volume contains no positive branch labels."""


class EmptySkeletonError(DomainError):
    """Ground-truth skeleton has no voxels."""


class EmptyStackError(DomainError):
    """Prediction stack has no members."""


class EmptyReportListError(DomainError):
    """No per-case reports to aggregate."""


class PredictorFailureError(DomainError):
    """The injected predictor raised; carries the failing iteration index."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"predictor failed at iteration {iteration}: {cause!r}")
        self.iteration = iteration
        self.cause = cause


class DoesNotFitError(DomainError):
    """Generated tree exceeds the volume bounds or collides with itself."""


class OutOfBoundsError(DomainError):
    """Tube endpoint outside the target volume."""


class UnknownBranchError(DomainError):
    """Referenced branch id not present in the table."""
