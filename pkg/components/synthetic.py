"""Synthetic test bench: seeded embeddings with planted identities and camera bias.

Every image feature is ``normalize(prototype + camera_offset * s + noise * n)``
where prototypes and camera offsets are unit vectors and the noise is
standard normal per coordinate. Camera offsets are mutually orthogonal
whenever ``dim >= cams``, so a camera only biases images seen by that same
camera. Tracklet ``t`` of identity ``i`` is seen by camera ``(i + t) mod cams``.

Optionally a heading offset is added as well: every tracklet drives past its
camera with a heading from one of ``bins`` orientation bins, an identity's
consecutive tracklets alternate between opposite headings, and vehicles
sharing a heading look alike.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Sequence

import numpy as np

from components.errors import ConfigError, MissingIdentityError
from components.feature_ops import normalize_rows
from components.feature_store import subset, validate_metas
from components.models import NO_TRACKLET, FeatureSet, ImageMeta, TrackletKey, View

logger = logging.getLogger(__name__)

ORIENTATION_BINS = 36


def _require_positive(name: str, value: int) -> None:
    if int(value) != value or value < 1:
        raise ConfigError(f"synth.{name}", f"must be a positive integer, got {value}")


def _camera_offsets(raw: np.ndarray) -> np.ndarray:
    """Unit rows, orthonormalized when there are no more rows than columns."""
    if raw.shape[0] > raw.shape[1]:
        return normalize_rows(raw)
    basis, _ = np.linalg.qr(raw.T)
    return np.ascontiguousarray(basis.T)


def tracklet_headings(
    metas: Sequence[ImageMeta], seed: int, bins: int = ORIENTATION_BINS
) -> dict[TrackletKey, int]:
    """Orientation bin of every tracklet.

    Labeled tracklets take a per-identity start bin and flip by half a turn
    from one tracklet to the next (in tracklet id order); unlabeled ones
    draw a bin each.
    """
    _require_positive("bins", bins)
    tracklets: dict[int, list[TrackletKey]] = {}
    headings: dict[TrackletKey, int] = {}
    spare = np.random.default_rng([seed, bins])
    for m in metas:
        key = m.tracklet_key
        if m.identity is None:
            if key not in headings:
                headings[key] = int(spare.integers(bins))
        elif key not in tracklets.setdefault(m.identity, []):
            tracklets[m.identity].append(key)
    for identity, keys in tracklets.items():
        start = int(np.random.default_rng([seed, identity]).integers(bins))
        ordered = sorted(keys, key=lambda k: (isinstance(k, str), k))
        for step, key in enumerate(ordered):
            headings[key] = (start + step * (bins // 2)) % bins
    return headings


def synth_generate(
    num_ids: int,
    cams: int,
    tracklets_per_id: int,
    frames_per_tracklet: int,
    dim: int,
    camera_offset_scale: float,
    noise_scale: float,
    seed: int,
    orientation_offset_scale: float = 0.0,
    bins: int = ORIENTATION_BINS,
) -> tuple[FeatureSet, list[ImageMeta]]:
    """Generate a labeled FeatureSet with tracklets and per-camera bias."""
    for name, value in (
        ("num_ids", num_ids),
        ("cams", cams),
        ("tracklets_per_id", tracklets_per_id),
        ("frames_per_tracklet", frames_per_tracklet),
    ):
        _require_positive(name, value)
    if int(dim) != dim or dim < 2:
        raise ConfigError("synth.dim", f"must be an integer >= 2, got {dim}")
    if camera_offset_scale < 0 or noise_scale < 0 or orientation_offset_scale < 0:
        raise ConfigError("synth", "offset and noise scales must be non-negative")

    rng = np.random.default_rng(seed)
    prototypes = normalize_rows(rng.standard_normal((num_ids, dim)))
    offsets = _camera_offsets(rng.standard_normal((cams, dim)))
    total = num_ids * tracklets_per_id * frames_per_tracklet
    noise = rng.standard_normal((total, dim))

    metas: list[ImageMeta] = []
    rows = np.empty((total, dim), dtype=np.float64)
    row = 0
    for i in range(num_ids):
        for t in range(tracklets_per_id):
            camera = (i + t) % cams
            for f in range(frames_per_tracklet):
                rows[row] = (
                    prototypes[i]
                    + offsets[camera] * camera_offset_scale
                    + noise[row] * noise_scale
                )
                metas.append(
                    ImageMeta(
                        image_id=f"id{i:04d}_t{t}_f{f}",
                        camera_id=camera,
                        tracklet_id=i * tracklets_per_id + t,
                        identity=i,
                    )
                )
                row += 1

    if orientation_offset_scale > 0:
        headings = tracklet_headings(metas, seed, bins)
        looks = normalize_rows(np.random.default_rng([seed, bins, dim]).standard_normal((bins, dim)))
        rows += orientation_offset_scale * looks[[headings[m.tracklet_key] for m in metas]]

    fs = FeatureSet.from_metas(normalize_rows(rows), metas, normalized=True)
    logger.debug(
        "Generated %d synthetic images (%d ids, %d cameras, seed %d)",
        total,
        num_ids,
        cams,
        seed,
    )
    return fs, metas


def synth_views(
    fs: FeatureSet, metas: Sequence[ImageMeta], noise_scale: float, seed: int
) -> list[tuple[FeatureSet, list[ImageMeta]]]:
    """Four perturbed extractions of every image, one per view tag."""
    rng = np.random.default_rng(seed)
    out = []
    for view in View:
        perturbed = fs.data.astype(np.float64) + noise_scale * rng.standard_normal(
            fs.data.shape
        ) / np.sqrt(fs.dim)
        view_metas = [replace(m, view=view) for m in metas]
        out.append(
            (
                FeatureSet.from_metas(normalize_rows(perturbed), view_metas, True),
                view_metas,
            )
        )
    return out


def synth_auxiliary(
    metas: Sequence[ImageMeta],
    kind: str,
    noise_scale: float,
    seed: int,
    bins: int = ORIENTATION_BINS,
) -> FeatureSet:
    """Auxiliary camera or orientation embeddings for distance fusion.

    Camera embeddings are noisy one-hot vectors over camera ids. Orientation
    embeddings place each tracklet at the centre of its heading bin on the
    unit circle; pass the generation seed to match the headings planted by
    synth_generate.
    """
    rng = np.random.default_rng(seed)
    if kind == "camera":
        width = max(2, max((m.camera_id for m in metas), default=0) + 1)
        base = np.zeros((len(metas), width))
        base[np.arange(len(metas)), [m.camera_id for m in metas]] = 1.0
    elif kind == "orientation":
        headings = tracklet_headings(metas, seed, bins)
        step = 2 * np.pi / bins
        theta = np.array([(headings[m.tracklet_key] + 0.5) * step for m in metas])
        base = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        raise ConfigError("synth.auxiliary", f"unknown auxiliary kind '{kind}'")
    noisy = base + noise_scale * rng.standard_normal(base.shape)
    return FeatureSet.from_metas(normalize_rows(noisy), list(metas), normalized=True)


def split_query_gallery(
    fs: FeatureSet, metas: Sequence[ImageMeta]
) -> tuple[FeatureSet, list[ImageMeta], FeatureSet, list[ImageMeta]]:
    """Hold out one query image per identity.

    The identity's lowest tracklet id provides the query (its middle frame,
    detached from the tracklet); the rest of that tracklet is dropped and
    every other image goes to the gallery.
    """
    validate_metas(metas)
    by_identity: dict[int, list[int]] = {}
    for idx, m in enumerate(metas):
        if m.identity is None:
            raise MissingIdentityError(m.image_id)
        by_identity.setdefault(m.identity, []).append(idx)

    query_rows: list[int] = []
    query_metas: list[ImageMeta] = []
    dropped: set[int] = set()
    for identity in sorted(by_identity):
        rows = by_identity[identity]
        tracked = [r for r in rows if metas[r].has_tracklet]
        if tracked:
            first = min(metas[r].tracklet_id for r in tracked)
            members = [r for r in tracked if metas[r].tracklet_id == first]
        else:
            members = rows[:1]
        pick = members[len(members) // 2]
        query_rows.append(pick)
        query_metas.append(replace(metas[pick], tracklet_id=NO_TRACKLET))
        dropped.update(members)

    gallery_rows = [i for i in range(len(metas)) if i not in dropped]
    q_fs, q_metas = subset(fs, metas, query_rows, metas_override=query_metas)
    g_fs, g_metas = subset(fs, metas, gallery_rows)
    logger.info(
        "Split %d images into %d queries and %d gallery images",
        len(metas),
        len(q_metas),
        len(g_metas),
    )
    return q_fs, q_metas, g_fs, g_metas
