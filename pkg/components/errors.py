"""Exception hierarchy for the ReID post-processing engine.

Two branches matter to callers: ``ValidationError`` (bad inputs or config,
CLI exit code 1) and ``ComputationError`` (degenerate numerics found while
running, CLI exit code 2).
"""

from __future__ import annotations

from typing import Optional, Sequence


class ReidError(Exception):
    """Base class for every engine error."""


class ValidationError(ReidError, ValueError):
    """Input, artifact or configuration rejected before computing."""


class ComputationError(ReidError, ArithmeticError):
    """A computation produced a degenerate result that must not be masked."""


class ManifestFormatError(ValidationError):
    """Manifest is unreadable or declares unsupported fields."""


class SizeMismatchError(ValidationError):
    """Raw data file length disagrees with the manifest."""

    def __init__(self, path: str, expected: int, actual: int) -> None:
        self.path = path
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{path}: size mismatch, expected {expected} bytes but found {actual}"
        )


class NonFiniteError(ValidationError):
    """A matrix holds NaN or Inf."""

    def __init__(self, row: int, col: int, where: str = "features") -> None:
        self.row = row
        self.col = col
        super().__init__(f"non-finite value in {where} at (row {row}, col {col})")


class DuplicateImageError(ValidationError):
    """The same (image_id, view) pair occurs twice."""

    def __init__(self, image_id: str, view: str) -> None:
        self.image_id = image_id
        self.view = view
        super().__init__(f"duplicate image '{image_id}' for view '{view}'")


class TrackletCameraError(ValidationError):
    """A tracklet spans more than one camera."""

    def __init__(self, tracklet_id: int, cameras: Sequence[int]) -> None:
        self.tracklet_id = tracklet_id
        self.cameras = tuple(sorted(cameras))
        super().__init__(
            f"tracklet {tracklet_id} spans cameras {list(self.cameras)}"
        )


class AlignmentError(ValidationError):
    """Parallel inputs disagree in length or row order."""


class DimensionMismatchError(ValidationError):
    """Feature dimensions disagree."""

    def __init__(self, left: int, right: int) -> None:
        self.left = left
        self.right = right
        super().__init__(f"dimension mismatch: {left} vs {right}")


class NotNormalizedError(ValidationError):
    """An operation needing unit rows received an unnormalized FeatureSet."""


class UnknownCameraError(ValidationError):
    """Camera id has no entry in the camera means."""

    def __init__(self, camera_id: int) -> None:
        self.camera_id = camera_id
        super().__init__(f"no camera mean for camera {camera_id}")


class MissingTrackletError(ValidationError):
    """Tracklet id has no aggregated feature."""

    def __init__(self, tracklet_key: object) -> None:
        self.tracklet_key = tracklet_key
        super().__init__(f"no tracklet aggregate for {tracklet_key}")


class MissingViewError(ValidationError):
    """An image present in one view set is missing from another."""

    def __init__(self, image_id: str, set_index: int) -> None:
        self.image_id = image_id
        self.set_index = set_index
        super().__init__(f"image '{image_id}' missing from view set {set_index}")


class GalleryTooSmallError(ValidationError):
    """Gallery cannot support the requested neighborhood size."""

    def __init__(self, gallery_size: int, k1: int) -> None:
        self.gallery_size = gallery_size
        self.k1 = k1
        super().__init__(
            f"gallery of {gallery_size} images is too small for k1={k1} "
            f"(need at least {k1 + 1})"
        )


class MatrixShapeError(ValidationError):
    """Distance matrix has the wrong shape, ids or symmetry."""


class MissingIdentityError(ValidationError):
    """Evaluation needs ground-truth identities that are absent."""

    def __init__(self, image_id: str) -> None:
        self.image_id = image_id
        super().__init__(f"image '{image_id}' has no ground-truth identity")


class EmptyQueryError(ValidationError):
    """Nothing to evaluate."""


class ConfigError(ValidationError):
    """Configuration value rejected; carries the dotted field path."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


class StageOrderError(ConfigError):
    """Stage list violates the dependency order."""

    def __init__(self, message: str, stage: Optional[str] = None) -> None:
        super().__init__("stages", message)
        self.stage = stage


class ZeroRowError(ComputationError):
    """A row has zero norm and cannot be normalized."""

    def __init__(self, row: int) -> None:
        self.row = row
        super().__init__(f"row {row} has zero norm")


class EmptyCandidatesError(ComputationError):
    """Camera verification removed every gallery candidate of a query."""

    def __init__(self, query_id: str) -> None:
        self.query_id = query_id
        super().__init__(f"query '{query_id}' has no candidates left after masking")
