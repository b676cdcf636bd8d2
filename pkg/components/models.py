"""Data models for embeddings, metadata, distances, labels and reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from components.errors import (
    AlignmentError,
    ConfigError,
    MatrixShapeError,
    NonFiniteError,
    NotNormalizedError,
    ValidationError,
)

NO_TRACKLET = -1
"""Reserved tracklet id for images that belong to no tracklet."""

NORM_TOLERANCE = 1e-5

TrackletKey = Union[int, str]
"""Tracklet id, or the image id for images that form a singleton tracklet."""


class View(str, Enum):
    """Augmentation-test variant an embedding was extracted from."""

    ORIGINAL = "original"
    CROPPED = "cropped"
    FLIPPED_ORIGINAL = "flipped_original"
    FLIPPED_CROPPED = "flipped_cropped"


class DistanceKind(str, Enum):
    """Provenance tag of a distance matrix."""

    RAW = "raw"
    JACCARD = "jaccard"
    RERANKED = "reranked"
    FUSED = "fused"


class TrackletMode(str, Enum):
    """How frames of a tracklet are aggregated."""

    MEAN = "mean"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class ImageMeta:
    """Per-image record parallel to a FeatureSet row."""

    image_id: str
    camera_id: int
    tracklet_id: int = NO_TRACKLET
    identity: Optional[int] = None  # absent for unlabeled test data
    view: View = View.ORIGINAL

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValidationError("image_id must be a non-empty string")
        if self.camera_id < 0:
            raise ValidationError(f"{self.image_id}: camera_id must be >= 0")
        if self.tracklet_id < NO_TRACKLET:
            raise ValidationError(f"{self.image_id}: invalid tracklet_id")
        if self.identity is not None and self.identity < 0:
            raise ValidationError(f"{self.image_id}: identity must be >= 0")

    @property
    def has_tracklet(self) -> bool:
        """Whether the image belongs to a real tracklet."""
        return self.tracklet_id != NO_TRACKLET

    @property
    def tracklet_key(self) -> TrackletKey:
        """Grouping key; untracked images act as singleton tracklets."""
        return self.tracklet_id if self.has_tracklet else self.image_id


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Immutable N x D float32 embedding matrix.

    ``ids`` optionally carries the image id of every row; it is what
    distance matrices use for their row/col ids.
    """

    data: np.ndarray
    normalized: bool = False
    ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if data.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got {data.ndim}-D")
        if data.shape[1] < 1:
            raise ValidationError("feature dimension must be positive")
        bad = np.argwhere(~np.isfinite(data))
        if bad.size:
            raise NonFiniteError(int(bad[0][0]), int(bad[0][1]))
        if self.ids and len(self.ids) != data.shape[0]:
            raise AlignmentError(
                f"{len(self.ids)} ids for {data.shape[0]} feature rows"
            )
        if self.normalized and data.shape[0]:
            norms = np.linalg.norm(data.astype(np.float64), axis=1)
            off = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
            if off.size:
                raise NotNormalizedError(
                    f"row {int(off[0])} has norm {norms[off[0]]:.6f} "
                    "but the set is flagged normalized"
                )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @property
    def dim(self) -> int:
        """Embedding dimension D."""
        return int(self.data.shape[1])

    @property
    def count(self) -> int:
        """Number of rows N."""
        return int(self.data.shape[0])

    def row_ids(self) -> tuple[str, ...]:
        """Image ids, or positional ids when the set carries none."""
        return self.ids if self.ids else tuple(str(i) for i in range(self.count))

    @staticmethod
    def from_metas(
        data: np.ndarray, metas: list[ImageMeta], normalized: bool = False
    ) -> FeatureSet:
        """Build a set whose ids come from the parallel metadata."""
        return FeatureSet(data, normalized, tuple(m.image_id for m in metas))


@dataclass(frozen=True)
class Manifest:
    """On-disk description of a raw feature matrix and its metadata file."""

    dim: int
    count: int
    data_path: str
    metadata_path: str
    dtype: str = "f32le"
    order: str = "row_major"

    @property
    def expected_bytes(self) -> int:
        """Byte length the data file must have."""
        return self.count * self.dim * 4

    def to_dict(self) -> dict:
        """Serialize using the manifest field names."""
        return {
            "dim": self.dim,
            "count": self.count,
            "dtype": self.dtype,
            "order": self.order,
            "data": self.data_path,
            "meta": self.metadata_path,
        }


@dataclass(frozen=True, eq=False)
class CameraMeans:
    """Per-camera mean feature and image count."""

    means: dict[int, np.ndarray]
    counts: dict[int, int]

    @property
    def cameras(self) -> list[int]:
        """Camera ids in ascending order."""
        return sorted(self.means)


@dataclass(frozen=True, eq=False)
class TrackletFeatures:
    """Aggregated feature per tracklet, with the member rows and weights used."""

    vectors: dict[TrackletKey, np.ndarray]
    members: dict[TrackletKey, tuple[int, ...]]
    weights: dict[TrackletKey, np.ndarray]
    mode: TrackletMode


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Q x G distance matrix with provenance.

    Entries are finite, except that camera verification may set masked
    entries to ``+inf``; ``masked`` records that it did.
    """

    data: np.ndarray
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    kind: DistanceKind = DistanceKind.RAW
    masked: bool = False

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if data.ndim != 2:
            raise MatrixShapeError(f"distance matrix must be 2-D, got {data.ndim}-D")
        if data.shape != (len(self.row_ids), len(self.col_ids)):
            raise MatrixShapeError(
                f"matrix shape {data.shape} does not match "
                f"{len(self.row_ids)} row ids x {len(self.col_ids)} col ids"
            )
        bad = np.isnan(data) | (np.isinf(data) & ~(self.masked & (data > 0)))
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise NonFiniteError(int(row), int(col), where="distances")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "col_ids", tuple(self.col_ids))
        object.__setattr__(self, "kind", DistanceKind(self.kind))

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols)."""
        return self.data.shape  # type: ignore[return-value]

    @property
    def is_square(self) -> bool:
        """Whether rows and cols reference the same images in the same order."""
        return self.row_ids == self.col_ids

    def replace(
        self, data: np.ndarray, kind: Optional[DistanceKind] = None
    ) -> DistanceMatrix:
        """Same ids, new payload."""
        return DistanceMatrix(
            data, self.row_ids, self.col_ids, kind or self.kind, self.masked
        )


@dataclass(frozen=True)
class RerankParams:
    """k-reciprocal re-ranking parameters."""

    k1: int = 7
    k2: int = 2
    lambda_value: float = 0.6

    def __post_init__(self) -> None:
        if int(self.k1) != self.k1 or self.k1 <= 0:
            raise ConfigError("params.k1", f"must be a positive integer, got {self.k1}")
        if int(self.k2) != self.k2 or self.k2 < 1:
            raise ConfigError("params.k2", f"must be an integer >= 1, got {self.k2}")
        if self.k2 > self.k1:
            raise ConfigError("params.k2", f"k2={self.k2} must not exceed k1={self.k1}")
        if not 0.0 <= self.lambda_value <= 1.0:
            raise ConfigError(
                "params.lambda", f"must lie in [0, 1], got {self.lambda_value}"
            )


@dataclass(frozen=True)
class DbscanParams:
    """DBSCAN radius and density threshold."""

    eps: float = 0.6
    min_samples: int = 2

    def __post_init__(self) -> None:
        if not self.eps > 0 or not np.isfinite(self.eps):
            raise ConfigError("cluster.eps", f"must be a positive number, got {self.eps}")
        if int(self.min_samples) != self.min_samples or self.min_samples < 1:
            raise ConfigError(
                "cluster.min_samples", f"must be an integer >= 1, got {self.min_samples}"
            )


@dataclass(frozen=True, eq=False)
class PseudoLabels:
    """Cluster assignment per image; -1 marks noise."""

    labels: np.ndarray
    image_ids: tuple[str, ...] = ()
    params: Optional[DbscanParams] = None

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if labels.ndim != 1:
            raise ValidationError("labels must be a 1-D vector")
        if self.image_ids and len(self.image_ids) != labels.size:
            raise AlignmentError(f"{len(self.image_ids)} ids for {labels.size} labels")
        found = np.unique(labels[labels >= 0])
        if found.size and not np.array_equal(found, np.arange(found.size)):
            raise ValidationError("cluster labels must be consecutive from 0")
        if (labels < -1).any():
            raise ValidationError("labels below -1 are not allowed")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def num_clusters(self) -> int:
        """Number of non-noise clusters."""
        return int(self.labels.max() + 1) if self.labels.size else 0

    @property
    def num_noise(self) -> int:
        """Number of points labeled as noise."""
        return int((self.labels == -1).sum())


@dataclass(frozen=True)
class RankedQuery:
    """Ranked candidates for a single query."""

    query_id: str
    gallery_ids: tuple[str, ...]
    gallery_indices: tuple[int, ...]
    distances: tuple[float, ...]
    masked_indices: frozenset[int] = frozenset()


@dataclass(frozen=True)
class RankList:
    """Per-query ranked gallery lists, truncated to ``top_k``."""

    queries: tuple[RankedQuery, ...]
    top_k: int
    i2t: bool = False

    def __len__(self) -> int:
        return len(self.queries)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """mAP and CMC over the valid queries."""

    mAP: float
    cmc: np.ndarray
    per_query_ap: dict[str, float]
    num_queries: int
    skipped_queries: tuple[str, ...] = field(default_factory=tuple)

    def rank(self, k: int) -> float:
        """CMC at rank k (1-based); saturates past the list length."""
        if not self.cmc.size:
            return 0.0
        return float(self.cmc[min(k, self.cmc.size) - 1])

    @property
    def rank1(self) -> float:
        """Rank-1 accuracy."""
        return self.rank(1)

    def to_dict(self) -> dict:
        """Structured form written by the report exporter."""
        return {
            "mAP": round(float(self.mAP), 6),
            "rank1": round(self.rank(1), 6),
            "rank5": round(self.rank(5), 6),
            "rank10": round(self.rank(10), 6),
            "num_queries": self.num_queries,
            "num_valid_queries": len(self.per_query_ap),
            "skipped_queries": list(self.skipped_queries),
            "cmc": [round(float(v), 6) for v in self.cmc],
        }
