"""DBSCAN clustering and pseudo-label generation for unlabeled test data."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.cluster import DBSCAN

from components.distance import DEFAULT_BLOCK_SIZE, pairwise
from components.errors import (
    AlignmentError,
    ConfigError,
    ManifestFormatError,
    MatrixShapeError,
    ValidationError,
)
from components.feature_ops import (
    camera_means,
    fuse_tracklet,
    l2_normalize,
    subtract_camera_mean,
    tracklet_aggregate,
)
from components.models import (
    DbscanParams,
    DistanceMatrix,
    FeatureSet,
    ImageMeta,
    PseudoLabels,
    RerankParams,
    TrackletMode,
)
from components.rerank import jaccard_only

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-6
CLUSTER_DISTANCES = ("jaccard", "raw")


def _check_square(d: DistanceMatrix) -> np.ndarray:
    data = d.data
    if data.shape[0] != data.shape[1] or not d.is_square:
        raise MatrixShapeError(
            f"clustering needs a square self-distance matrix, got {data.shape}"
        )
    if not np.isfinite(data).all():
        raise MatrixShapeError("clustering distances must be finite")
    if (data < 0).any():
        raise ValidationError("clustering distances must be non-negative")
    if np.abs(np.diag(data)).max(initial=0.0) > SYMMETRY_TOLERANCE:
        raise MatrixShapeError("clustering distances need a zero diagonal")
    if np.abs(data - data.T).max(initial=0.0) > SYMMETRY_TOLERANCE:
        raise MatrixShapeError("clustering distances must be symmetric")
    return data


def dbscan(d: DistanceMatrix, params: DbscanParams, n_jobs: int = 1) -> PseudoLabels:
    """Density clustering over a precomputed square distance matrix.

    Core points have at least ``min_samples`` points (self included) within
    ``eps`` (inclusive). Clusters are numbered in ascending scan order and a
    border point joins the first cluster that reaches it; the rest is -1.
    """
    data = _check_square(d)
    if data.shape[0] == 0:
        return PseudoLabels(np.zeros(0, dtype=np.int64), (), params)
    model = DBSCAN(
        eps=params.eps,
        min_samples=params.min_samples,
        metric="precomputed",
        n_jobs=n_jobs,
    )
    labels = model.fit_predict(data)
    result = PseudoLabels(labels, d.row_ids, params)
    logger.info(
        "DBSCAN eps=%.4f min_samples=%d: %d clusters, %d noise of %d points",
        params.eps,
        params.min_samples,
        result.num_clusters,
        result.num_noise,
        labels.size,
    )
    return result


def cluster_distance(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    alpha: float,
    beta: float,
    rr: RerankParams,
    distance: str = "jaccard",
    block_size: int = DEFAULT_BLOCK_SIZE,
    max_workers: int = 1,
) -> DistanceMatrix:
    """Self-distance of the camera-corrected, tracklet-fused features."""
    if distance not in CLUSTER_DISTANCES:
        raise ConfigError("cluster.distance", f"must be one of {CLUSTER_DISTANCES}")
    normalized = l2_normalize(fs)
    means = camera_means(normalized, metas)
    corrected = subtract_camera_mean(normalized, metas, means, alpha)
    tracks = tracklet_aggregate(corrected, metas, TrackletMode.MEAN)
    fused = fuse_tracklet(corrected, metas, tracks, beta)
    if distance == "raw":
        return pairwise(fused, fused, block_size, max_workers)
    return jaccard_only(fused, None, rr, block_size, max_workers)


def generate_pseudo_labels(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    alpha: float,
    beta: float,
    rr: RerankParams,
    db: DbscanParams,
    distance: str = "jaccard",
    block_size: int = DEFAULT_BLOCK_SIZE,
    max_workers: int = 1,
) -> PseudoLabels:
    """Camera correction, tracklet fusion, Jaccard distance, then DBSCAN."""
    d = cluster_distance(fs, metas, alpha, beta, rr, distance, block_size, max_workers)
    return dbscan(d, db, n_jobs=max_workers)


def generate_label_sets(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    alpha: float,
    beta: float,
    rr: RerankParams,
    param_sets: Sequence[DbscanParams],
    distance: str = "jaccard",
    block_size: int = DEFAULT_BLOCK_SIZE,
    max_workers: int = 1,
) -> list[PseudoLabels]:
    """One label set per DBSCAN parameter pair, sharing a single distance pass."""
    if not param_sets:
        raise ConfigError("cluster.param_sets", "at least one parameter set is required")
    d = cluster_distance(fs, metas, alpha, beta, rr, distance, block_size, max_workers)
    return [dbscan(d, params, n_jobs=max_workers) for params in param_sets]


def estimate_eps(d: DistanceMatrix, rho: float) -> float:
    """Mean of the smallest ``round(rho * M)`` of the M distinct pair distances."""
    if not 0.0 < rho <= 1.0:
        raise ConfigError("cluster.rho", f"must lie in (0, 1], got {rho}")
    data = _check_square(d)
    upper = np.sort(data[np.triu_indices(data.shape[0], k=1)])
    if upper.size == 0:
        raise ValidationError("eps estimation needs at least two points")
    top = max(1, int(np.round(rho * upper.size)))
    return float(upper[:top].mean())


def pairwise_f1(
    labels: PseudoLabels | np.ndarray, identities: Sequence[int]
) -> tuple[float, float, float]:
    """Pair-counting precision, recall and F1 against ground-truth identities.

    Noise points take part in no predicted pair.
    """
    pred = np.asarray(labels.labels if isinstance(labels, PseudoLabels) else labels)
    truth = np.asarray(identities)
    if pred.shape != truth.shape:
        raise AlignmentError(f"{pred.size} labels for {truth.size} identities")
    upper = np.triu(np.ones((pred.size, pred.size), dtype=bool), k=1)
    same_pred = (pred[:, None] == pred[None, :]) & (pred[:, None] >= 0) & upper
    same_true = (truth[:, None] == truth[None, :]) & upper
    hits = int((same_pred & same_true).sum())
    predicted = int(same_pred.sum())
    actual = int(same_true.sum())
    precision = hits / predicted if predicted else 0.0
    recall = hits / actual if actual else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def write_labels(
    path: Path | str, labels: PseudoLabels, metas: Sequence[ImageMeta]
) -> Path:
    """Write the ``image_id,label`` hand-off file."""
    if labels.labels.size != len(metas):
        raise AlignmentError(f"{labels.labels.size} labels for {len(metas)} images")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["image_id", "label"])
        for meta, label in zip(metas, labels.labels):
            writer.writerow([meta.image_id, int(label)])
    return path


def read_labels(path: Path | str) -> PseudoLabels:
    """Read a label file written by write_labels."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"label file not found: {path}")
    ids: list[str] = []
    values: list[int] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        if next(reader, None) != ["image_id", "label"]:
            raise ManifestFormatError(f"{path}: header must be image_id,label")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                image_id, label = row
                values.append(int(label))
            except ValueError as e:
                raise ManifestFormatError(f"{path}:{line_no}: {e}") from e
            ids.append(image_id)
    return PseudoLabels(np.array(values, dtype=np.int64), tuple(ids))
