"""Feature-space transformations applied before any distance is computed.

Every fusion step re-normalizes its output rows; a row that collapses to the
zero vector is reported through ZeroRowError instead of being patched.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np
from scipy.special import softmax

from components.errors import (
    AlignmentError,
    ConfigError,
    DimensionMismatchError,
    MissingTrackletError,
    MissingViewError,
    NotNormalizedError,
    UnknownCameraError,
    ValidationError,
    ZeroRowError,
)
from components.models import (
    CameraMeans,
    FeatureSet,
    ImageMeta,
    TrackletFeatures,
    TrackletKey,
    TrackletMode,
    View,
)

logger = logging.getLogger(__name__)

MAX_ENSEMBLE_DIM = 65536
_ZERO_NORM = 1e-12


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Return a float64 copy of matrix with unit-norm rows."""
    rows = np.asarray(matrix, dtype=np.float64)
    if rows.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got {rows.ndim}-D")
    norms = np.linalg.norm(rows, axis=1)
    zero = np.flatnonzero(norms <= _ZERO_NORM)
    if zero.size:
        raise ZeroRowError(int(zero[0]))
    return rows / norms[:, None]


def _check_aligned(fs: FeatureSet, metas: Sequence[ImageMeta]) -> None:
    if fs.count != len(metas):
        raise AlignmentError(f"{fs.count} feature rows but {len(metas)} metadata records")


def l2_normalize(fs: FeatureSet) -> FeatureSet:
    """Scale every row to unit length."""
    return FeatureSet(normalize_rows(fs.data), normalized=True, ids=fs.ids)


def camera_means(fs: FeatureSet, metas: Sequence[ImageMeta]) -> CameraMeans:
    """Per-camera average feature and image count."""
    _check_aligned(fs, metas)
    cameras = np.array([m.camera_id for m in metas], dtype=np.int64)
    data = fs.data.astype(np.float64)
    means: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for camera in np.unique(cameras):
        rows = data[cameras == camera]
        means[int(camera)] = rows.mean(axis=0)
        counts[int(camera)] = int(rows.shape[0])
    return CameraMeans(means=means, counts=counts)


def subtract_camera_mean(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    means: CameraMeans,
    alpha: float,
    renormalize: bool = True,
) -> FeatureSet:
    """Remove ``alpha`` times the image's camera mean from every row.

    With ``renormalize=False`` the raw corrected rows are returned unflagged.
    """
    _check_aligned(fs, metas)
    if not np.isfinite(alpha):
        raise ConfigError("params.alpha", f"must be finite, got {alpha}")
    for m in metas:
        if m.camera_id not in means.means:
            raise UnknownCameraError(m.camera_id)
    bias = np.stack([means.means[m.camera_id] for m in metas]) if metas else 0.0
    return _subtract(fs, bias, alpha, renormalize)


def other_tracklet_means(fs: FeatureSet, metas: Sequence[ImageMeta]) -> np.ndarray:
    """Per-row camera mean over the other tracklets of the row's camera.

    Untracked images leave out only themselves. A camera that holds nothing
    but the row's own tracklet falls back to its full mean.
    """
    _check_aligned(fs, metas)
    data = fs.data.astype(np.float64)
    totals: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    groups: dict[tuple[int, TrackletKey], list[int]] = {}
    for idx, m in enumerate(metas):
        if m.camera_id not in totals:
            totals[m.camera_id] = np.zeros(fs.dim, dtype=np.float64)
            counts[m.camera_id] = 0
        totals[m.camera_id] += data[idx]
        counts[m.camera_id] += 1
        groups.setdefault((m.camera_id, m.tracklet_key), []).append(idx)

    out = np.empty_like(data)
    for (camera, _), rows in groups.items():
        rest = counts[camera] - len(rows)
        if rest:
            out[rows] = (totals[camera] - data[rows].sum(axis=0)) / rest
        else:
            out[rows] = totals[camera] / counts[camera]
    return out


def subtract_other_tracklet_mean(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    alpha: float,
    renormalize: bool = True,
) -> FeatureSet:
    """Camera-mean subtraction with the row's own tracklet left out of the mean."""
    if not np.isfinite(alpha):
        raise ConfigError("params.alpha", f"must be finite, got {alpha}")
    bias = other_tracklet_means(fs, metas) if metas else 0.0
    return _subtract(fs, bias, alpha, renormalize)


def _subtract(fs: FeatureSet, bias, alpha: float, renormalize: bool) -> FeatureSet:
    corrected = fs.data.astype(np.float64) - alpha * bias
    if not renormalize:
        return FeatureSet(corrected, normalized=False, ids=fs.ids)
    return FeatureSet(normalize_rows(corrected), normalized=True, ids=fs.ids)


def group_tracklets(metas: Sequence[ImageMeta]) -> dict[TrackletKey, list[int]]:
    """Row indices per tracklet key, in first-appearance order."""
    groups: dict[TrackletKey, list[int]] = {}
    for idx, m in enumerate(metas):
        groups.setdefault(m.tracklet_key, []).append(idx)
    return groups


def tracklet_aggregate(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    mode: TrackletMode | str = TrackletMode.WEIGHTED,
    temperature: float = 1.0,
) -> TrackletFeatures:
    """Aggregate the frames of every tracklet into one unit vector.

    ``mean`` averages the member rows. ``weighted`` scores each member by its
    cosine to the tracklet mean, turns the scores into softmax weights with
    the given temperature and sums the members with those weights.
    """
    _check_aligned(fs, metas)
    if not fs.normalized:
        raise NotNormalizedError("tracklet aggregation needs a normalized FeatureSet")
    mode = TrackletMode(mode)
    if not temperature > 0:
        raise ConfigError("params.temperature", f"must be positive, got {temperature}")

    data = fs.data.astype(np.float64)
    vectors: dict[TrackletKey, np.ndarray] = {}
    members: dict[TrackletKey, tuple[int, ...]] = {}
    weights: dict[TrackletKey, np.ndarray] = {}
    for key, rows in group_tracklets(metas).items():
        frames = data[rows]
        center = normalize_rows(frames.mean(axis=0, keepdims=True))[0]
        if mode is TrackletMode.MEAN:
            w = np.full(len(rows), 1.0 / len(rows))
            vector = center
        else:
            w = softmax(frames @ center / temperature)
            vector = normalize_rows((w @ frames)[None, :])[0]
        vectors[key] = vector
        members[key] = tuple(rows)
        weights[key] = w
    logger.debug("Aggregated %d tracklets (%s mode)", len(vectors), mode.value)
    return TrackletFeatures(vectors=vectors, members=members, weights=weights, mode=mode)


def fuse_tracklet(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    tf: TrackletFeatures,
    beta: float,
    renormalize: bool = True,
) -> FeatureSet:
    """Blend each frame with its tracklet: ``beta * f + (1 - beta) * t``."""
    _check_aligned(fs, metas)
    if not 0.0 <= beta <= 1.0:
        raise ConfigError("params.beta", f"must lie in [0, 1], got {beta}")
    missing = next((m.tracklet_key for m in metas if m.tracklet_key not in tf.vectors), None)
    if missing is not None:
        raise MissingTrackletError(missing)
    if not metas:
        return FeatureSet(fs.data, normalized=fs.normalized, ids=fs.ids)
    tracks = np.stack([tf.vectors[m.tracklet_key] for m in metas])
    fused = beta * fs.data.astype(np.float64) + (1.0 - beta) * tracks
    if not renormalize:
        return FeatureSet(fused, normalized=False, ids=fs.ids)
    return FeatureSet(normalize_rows(fused), normalized=True, ids=fs.ids)


def average_views(
    sets: Sequence[FeatureSet], metas_per_set: Sequence[Sequence[ImageMeta]]
) -> tuple[FeatureSet, list[ImageMeta]]:
    """Mean of every image's view features, matched by image id.

    Output rows follow the first set's order; output metadata is tagged
    with the original view.
    """
    if not sets:
        raise ValidationError("average_views needs at least one view set")
    if len(sets) != len(metas_per_set):
        raise AlignmentError(f"{len(sets)} view sets but {len(metas_per_set)} metadata lists")
    for fs, metas in zip(sets, metas_per_set):
        _check_aligned(fs, metas)
        if fs.dim != sets[0].dim:
            raise DimensionMismatchError(sets[0].dim, fs.dim)

    reference = metas_per_set[0]
    order = [m.image_id for m in reference]
    total = np.zeros((len(order), sets[0].dim), dtype=np.float64)
    for set_index, (fs, metas) in enumerate(zip(sets, metas_per_set)):
        position = {m.image_id: i for i, m in enumerate(metas)}
        for image_id in order:
            if image_id not in position:
                raise MissingViewError(image_id, set_index)
        extra = set(position).difference(order)
        if extra:
            raise MissingViewError(sorted(extra)[0], 0)
        total += fs.data.astype(np.float64)[[position[i] for i in order]]

    out_metas = [
        ImageMeta(m.image_id, m.camera_id, m.tracklet_id, m.identity, View.ORIGINAL)
        for m in reference
    ]
    averaged = normalize_rows(total / len(sets))
    return FeatureSet.from_metas(averaged, out_metas, normalized=True), out_metas


def ensemble_features(
    model_sets: Sequence[FeatureSet],
    metas_per_set: Optional[Sequence[Sequence[ImageMeta]]] = None,
) -> FeatureSet:
    """Concatenate per-model unit features and re-normalize."""
    if not model_sets:
        raise ValidationError("ensemble needs at least one model set")
    first = model_sets[0]
    for index, fs in enumerate(model_sets):
        if not fs.normalized:
            raise NotNormalizedError(f"model set {index} is not normalized")
        if fs.count != first.count:
            raise AlignmentError(f"model set {index} has {fs.count} rows, expected {first.count}")
        if fs.ids != first.ids:
            raise AlignmentError(f"model set {index} is not aligned on image id order")
        if metas_per_set is not None:
            ids = tuple(m.image_id for m in metas_per_set[index])
            reference = tuple(m.image_id for m in metas_per_set[0])
            if ids != reference:
                raise AlignmentError(f"model set {index} metadata order differs from set 0")
    total_dim = sum(fs.dim for fs in model_sets)
    if total_dim > MAX_ENSEMBLE_DIM:
        raise ValidationError(
            f"ensemble dimension {total_dim} exceeds the limit of {MAX_ENSEMBLE_DIM}"
        )
    stacked = np.hstack([fs.data.astype(np.float64) for fs in model_sets])
    return FeatureSet(normalize_rows(stacked), normalized=True, ids=first.ids)
