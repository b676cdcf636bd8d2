"""Dense pairwise distances, distance fusion and distance checkpoint files."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from components.errors import (
    AlignmentError,
    DimensionMismatchError,
    ManifestFormatError,
    MatrixShapeError,
    MissingTrackletError,
    NotNormalizedError,
    SizeMismatchError,
    ValidationError,
)
from components.models import (
    DistanceKind,
    DistanceMatrix,
    FeatureSet,
    ImageMeta,
    TrackletFeatures,
)

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 512
MAX_SQUARED_DISTANCE = 4.0
_DISTANCE_DTYPES = {"f32le": np.dtype("<f4"), "f64le": np.dtype("<f8")}


def pairwise(
    q: FeatureSet,
    g: FeatureSet,
    block_size: int = DEFAULT_BLOCK_SIZE,
    max_workers: int = 1,
) -> DistanceMatrix:
    """Squared Euclidean distances ``2 - 2 q.g`` between unit rows.

    Rows are computed in blocks of ``block_size``; with ``max_workers > 1``
    the blocks run on a thread pool. Entries whose row and column refer to
    the same image are exactly zero.
    """
    if not q.normalized or not g.normalized:
        raise NotNormalizedError("pairwise distances need normalized feature sets")
    if q.dim != g.dim:
        raise DimensionMismatchError(q.dim, g.dim)
    if block_size < 1:
        raise ValidationError(f"block_size must be positive, got {block_size}")

    left = q.data.astype(np.float64)
    right = g.data.astype(np.float64)
    out = np.empty((q.count, g.count), dtype=np.float64)

    def fill(start: int) -> None:
        stop = min(start + block_size, q.count)
        block = 2.0 - 2.0 * (left[start:stop] @ right.T)
        np.clip(block, 0.0, MAX_SQUARED_DISTANCE, out=block)
        out[start:stop] = block

    starts = range(0, q.count, block_size)
    if max_workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            list(executor.map(fill, starts))
    else:
        for start in starts:
            fill(start)

    if g is q:
        np.fill_diagonal(out, 0.0)
    elif q.ids and g.ids:
        columns: dict[str, list[int]] = {}
        for j, image_id in enumerate(g.ids):
            columns.setdefault(image_id, []).append(j)
        for i, image_id in enumerate(q.ids):
            for j in columns.get(image_id, ()):
                out[i, j] = 0.0
    return DistanceMatrix(out, q.row_ids(), g.row_ids(), DistanceKind.RAW)


def _check_same_layout(base: DistanceMatrix, other: DistanceMatrix, name: str) -> None:
    if other.shape != base.shape:
        raise MatrixShapeError(f"{name} has shape {other.shape}, expected {base.shape}")
    if other.row_ids != base.row_ids or other.col_ids != base.col_ids:
        raise MatrixShapeError(f"{name} ids differ from the reference matrix")


def fuse_distances(
    d_r: DistanceMatrix,
    d_c: DistanceMatrix,
    d_o: DistanceMatrix,
    lambda1: float,
    lambda2: float,
) -> DistanceMatrix:
    """Subtract weighted camera and orientation distances from the ReID distance.

    Negative results are kept; only the ordering matters downstream.
    """
    _check_same_layout(d_r, d_c, "camera distance")
    _check_same_layout(d_r, d_o, "orientation distance")
    data = d_r.data - lambda1 * d_c.data - lambda2 * d_o.data
    return DistanceMatrix(
        data, d_r.row_ids, d_r.col_ids, DistanceKind.FUSED, masked=d_r.masked
    )


def tracklet_distances(
    d: DistanceMatrix, g_metas: Sequence[ImageMeta], tf: TrackletFeatures
) -> DistanceMatrix:
    """Replace each gallery column by the weighted distance to its tracklet.

    Column j becomes ``sum_m w_m * d[:, m]`` over the members m of gallery
    image j's tracklet, using the member weights of ``tf`` (which must have
    been aggregated over ``g_metas``).
    """
    if len(g_metas) != d.shape[1]:
        raise AlignmentError(f"{len(g_metas)} gallery records for {d.shape[1]} columns")
    out = np.array(d.data, copy=True)
    done: set[object] = set()
    for m in g_metas:
        key = m.tracklet_key
        if key in done:
            continue
        if key not in tf.vectors:
            raise MissingTrackletError(key)
        members = np.asarray(tf.members[key], dtype=np.int64)
        if members.size and members.max() >= d.shape[1]:
            raise AlignmentError(f"tracklet {key} references rows outside the gallery")
        combined = d.data[:, members] @ tf.weights[key]
        out[:, members] = combined[:, None]
        done.add(key)
    return d.replace(out)


def ensemble_distances(mats: Sequence[DistanceMatrix]) -> DistanceMatrix:
    """Entrywise mean of aligned distance matrices."""
    if not mats:
        raise ValidationError("ensemble needs at least one distance matrix")
    first = mats[0]
    for index, other in enumerate(mats[1:], start=1):
        _check_same_layout(first, other, f"distance matrix {index}")
    data = np.mean([m.data for m in mats], axis=0)
    kind = (
        DistanceKind.RAW
        if all(m.kind is DistanceKind.RAW for m in mats)
        else DistanceKind.FUSED
    )
    return DistanceMatrix(
        data, first.row_ids, first.col_ids, kind, masked=any(m.masked for m in mats)
    )


def save_distance(d: DistanceMatrix, path: Path | str, dtype: str = "f32le") -> Path:
    """Dump d as a raw row-major matrix plus a JSON sidecar at ``path``.

    The matrix goes to ``<stem>.bin`` next to the sidecar. Masked entries
    are written as +inf.
    """
    if dtype not in _DISTANCE_DTYPES:
        raise ValidationError(f"unsupported distance dtype '{dtype}'")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data_name = f"{path.stem}.bin"
    d.data.astype(_DISTANCE_DTYPES[dtype]).tofile(path.parent / data_name)
    sidecar = {
        "rows": d.shape[0],
        "cols": d.shape[1],
        "kind": d.kind.value,
        "dtype": dtype,
        "order": "row_major",
        "data": data_name,
        "masked": d.masked,
        "row_ids": list(d.row_ids),
        "col_ids": list(d.col_ids),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
    logger.debug("Saved %s distance %s to %s", d.kind.value, d.shape, path)
    return path


def load_distance(path: Path | str) -> DistanceMatrix:
    """Read a distance matrix written by save_distance."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"distance manifest not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        rows, cols = int(sidecar["rows"]), int(sidecar["cols"])
        dtype = _DISTANCE_DTYPES[sidecar["dtype"]]
        kind = DistanceKind(sidecar["kind"])
        data_path = path.parent / sidecar["data"]
        row_ids, col_ids = sidecar["row_ids"], sidecar["col_ids"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ManifestFormatError(f"{path}: invalid distance manifest ({e})") from e
    if sidecar.get("order", "row_major") != "row_major":
        raise ManifestFormatError(f"{path}: order must be 'row_major'")
    if not data_path.is_file():
        raise FileNotFoundError(f"distance data not found: {data_path}")
    expected = rows * cols * dtype.itemsize
    actual = data_path.stat().st_size
    if actual != expected:
        raise SizeMismatchError(str(data_path), expected, actual)
    data = np.fromfile(data_path, dtype=dtype).reshape(rows, cols)
    masked = bool(sidecar.get("masked", False)) or bool(np.isposinf(data).any())
    return DistanceMatrix(data, tuple(row_ids), tuple(col_ids), kind, masked=masked)
