"""Ingest, validate and persist embedding matrices with their metadata.

On-disk layout: a JSON manifest naming a raw matrix file (32-bit IEEE-754,
little-endian, row-major) and a CSV metadata file, both relative to the
manifest's directory.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from components.errors import (
    AlignmentError,
    DuplicateImageError,
    ManifestFormatError,
    SizeMismatchError,
    TrackletCameraError,
    ValidationError,
)
from components.models import NO_TRACKLET, FeatureSet, ImageMeta, Manifest, View

logger = logging.getLogger(__name__)

DTYPE_TAG = "f32le"
ORDER_TAG = "row_major"
METADATA_HEADER = ("image_id", "camera_id", "tracklet_id", "identity", "view")
_RAW_DTYPE = np.dtype("<f4")


def read_manifest(manifest_path: Path | str) -> Manifest:
    """Parse and validate a feature manifest."""
    path = Path(manifest_path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestFormatError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ManifestFormatError(f"{path}: manifest must be a mapping")
    missing = [k for k in ("dim", "count", "dtype", "order", "data", "meta") if k not in raw]
    if missing:
        raise ManifestFormatError(f"{path}: missing fields {missing}")
    if raw["dtype"] != DTYPE_TAG:
        raise ManifestFormatError(f"{path}: dtype must be '{DTYPE_TAG}', got '{raw['dtype']}'")
    if raw["order"] != ORDER_TAG:
        raise ManifestFormatError(f"{path}: order must be '{ORDER_TAG}', got '{raw['order']}'")
    dim, count = raw["dim"], raw["count"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ManifestFormatError(f"{path}: dim must be a positive integer")
    if not isinstance(count, int) or isinstance(count, bool) or count < 0:
        raise ManifestFormatError(f"{path}: count must be a non-negative integer")
    return Manifest(
        dim=dim,
        count=count,
        data_path=str(raw["data"]),
        metadata_path=str(raw["meta"]),
        dtype=raw["dtype"],
        order=raw["order"],
    )


def read_metadata(path: Path | str) -> list[ImageMeta]:
    """Read the image_id,camera_id,tracklet_id,identity,view CSV."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"metadata file not found: {path}")
    metas: list[ImageMeta] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != METADATA_HEADER:
            raise ManifestFormatError(
                f"{path}: header must be {','.join(METADATA_HEADER)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(METADATA_HEADER):
                raise ManifestFormatError(
                    f"{path}:{line_no}: expected {len(METADATA_HEADER)} fields, got {len(row)}"
                )
            image_id, camera, tracklet, identity, view = (c.strip() for c in row)
            try:
                metas.append(
                    ImageMeta(
                        image_id=image_id,
                        camera_id=int(camera),
                        tracklet_id=int(tracklet),
                        identity=int(identity) if identity else None,
                        view=View(view) if view else View.ORIGINAL,
                    )
                )
            except ValueError as e:
                raise ManifestFormatError(f"{path}:{line_no}: {e}") from e
    return metas


def write_metadata(path: Path | str, metas: Sequence[ImageMeta]) -> None:
    """Write metadata rows in the CSV format read_metadata expects."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METADATA_HEADER)
        for m in metas:
            writer.writerow(
                [
                    m.image_id,
                    m.camera_id,
                    m.tracklet_id if m.has_tracklet else NO_TRACKLET,
                    "" if m.identity is None else m.identity,
                    m.view.value,
                ]
            )


def validate_metas(metas: Sequence[ImageMeta]) -> None:
    """Reject duplicate (image_id, view) pairs and multi-camera tracklets."""
    seen: set[tuple[str, View]] = set()
    cameras: dict[int, set[int]] = defaultdict(set)
    for m in metas:
        key = (m.image_id, m.view)
        if key in seen:
            raise DuplicateImageError(m.image_id, m.view.value)
        seen.add(key)
        if m.has_tracklet:
            cameras[m.tracklet_id].add(m.camera_id)
    for tracklet_id, cams in cameras.items():
        if len(cams) > 1:
            raise TrackletCameraError(tracklet_id, cams)


def ingest(manifest_path: Path | str) -> tuple[FeatureSet, list[ImageMeta]]:
    """Load a validated FeatureSet and its row-aligned metadata."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    data_path = base / manifest.data_path
    meta_path = base / manifest.metadata_path
    if not data_path.is_file():
        raise FileNotFoundError(f"data file not found: {data_path}")
    actual = data_path.stat().st_size
    if actual != manifest.expected_bytes:
        raise SizeMismatchError(str(data_path), manifest.expected_bytes, actual)
    raw = np.fromfile(data_path, dtype=_RAW_DTYPE, count=manifest.count * manifest.dim)
    matrix = raw.reshape(manifest.count, manifest.dim)
    metas = read_metadata(meta_path)
    if len(metas) != manifest.count:
        raise AlignmentError(
            f"{meta_path}: {len(metas)} metadata records for {manifest.count} rows"
        )
    validate_metas(metas)
    normalized = _manifest_flag(manifest_path, "normalized")
    fs = FeatureSet.from_metas(matrix, metas, normalized=normalized)
    logger.info(
        "Ingested %d x %d features from %s", fs.count, fs.dim, manifest_path
    )
    return fs, metas


def _manifest_flag(manifest_path: Path, key: str) -> bool:
    """Optional boolean extension field of the manifest."""
    with open(manifest_path, "r", encoding="utf-8") as f:
        value = json.load(f).get(key, False)
    if not isinstance(value, bool):
        raise ManifestFormatError(f"{manifest_path}: '{key}' must be a boolean")
    return value


def export(
    fs: FeatureSet, metas: Sequence[ImageMeta], out_path: Path | str
) -> Manifest:
    """Write fs and metas next to a manifest at out_path.

    The raw matrix goes to ``<stem>.f32`` and the metadata to
    ``<stem>.csv`` in the manifest's directory.
    """
    if fs.count != len(metas):
        raise AlignmentError(
            f"{fs.count} feature rows but {len(metas)} metadata records"
        )
    validate_metas(metas)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data_name = f"{out_path.stem}.f32"
    meta_name = f"{out_path.stem}.csv"
    fs.data.astype(_RAW_DTYPE, copy=False).tofile(out_path.parent / data_name)
    write_metadata(out_path.parent / meta_name, metas)
    manifest = Manifest(
        dim=fs.dim, count=fs.count, data_path=data_name, metadata_path=meta_name
    )
    payload = manifest.to_dict()
    payload["normalized"] = fs.normalized
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
    logger.debug("Exported %d x %d features to %s", fs.count, fs.dim, out_path)
    return manifest


def subset(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    indices: Sequence[int] | np.ndarray,
    metas_override: Optional[Sequence[ImageMeta]] = None,
) -> tuple[FeatureSet, list[ImageMeta]]:
    """Select rows (in the given order) from a set and its metadata."""
    if fs.count != len(metas):
        raise AlignmentError(f"{fs.count} feature rows but {len(metas)} metadata records")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= fs.count):
        raise ValidationError("subset index out of range")
    picked = list(metas_override) if metas_override is not None else [metas[i] for i in idx]
    if len(picked) != idx.size:
        raise AlignmentError("metadata override does not match the selected rows")
    data = fs.data[idx] if idx.size else np.zeros((0, fs.dim), dtype=np.float32)
    return FeatureSet.from_metas(data, picked, normalized=fs.normalized), picked
