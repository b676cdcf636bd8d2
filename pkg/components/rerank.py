"""k-reciprocal re-ranking over the joint query and gallery neighborhood graph."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from components.distance import DEFAULT_BLOCK_SIZE, pairwise
from components.errors import GalleryTooSmallError, MatrixShapeError, NotNormalizedError
from components.models import DistanceKind, DistanceMatrix, FeatureSet, RerankParams

logger = logging.getLogger(__name__)


def _reciprocal(rank: np.ndarray, i: int, k: int) -> np.ndarray:
    """k-reciprocal neighbors of i: forward k-NN that list i back."""
    forward = rank[i, : k + 1]
    backward = rank[forward, : k + 1]
    return forward[np.any(backward == i, axis=1)]


def _encode(raw: np.ndarray, rank: np.ndarray, k1: int) -> np.ndarray:
    """Gaussian-weighted, L1-normalized encodings over expanded reciprocal sets."""
    n = raw.shape[0]
    half = k1 // 2
    v = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        core = _reciprocal(rank, i, k1)
        expanded = [core]
        for candidate in core:
            sub = _reciprocal(rank, int(candidate), half)
            if 3 * np.intersect1d(sub, core).size >= 2 * sub.size:
                expanded.append(sub)
        members = np.unique(np.concatenate(expanded))
        weight = np.exp(-raw[i, members])
        v[i, members] = weight / weight.sum()
    return v


def _jaccard_rows(v: np.ndarray, rows: range) -> np.ndarray:
    totals = v.sum(axis=1)
    out = np.empty((len(rows), v.shape[0]), dtype=np.float64)
    for r, i in enumerate(rows):
        support = np.flatnonzero(v[i])
        shared = np.minimum(v[i, support], v[:, support]).sum(axis=1)
        union = totals[i] + totals - shared
        out[r] = 1.0 - np.divide(shared, union, out=np.zeros_like(shared), where=union > 0)
    return out


def _jaccard(
    q: FeatureSet,
    g: Optional[FeatureSet],
    params: RerankParams,
    block_size: int,
    max_workers: int,
    base: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, tuple[str, ...], tuple[str, ...]]:
    """Jaccard and base distances restricted to query x gallery.

    ``base`` replaces the raw joint (Q+G)^2 distance, e.g. with a fused one.
    """
    self_mode = g is None or g is q
    gallery = q if self_mode else g
    if not q.normalized or not gallery.normalized:
        raise NotNormalizedError("re-ranking needs normalized feature sets")
    if gallery.count < params.k1 + 1:
        raise GalleryTooSmallError(gallery.count, params.k1)

    if self_mode:
        union = FeatureSet(q.data, normalized=True)
    else:
        union = FeatureSet(np.vstack([q.data, gallery.data]), normalized=True)
    if base is None:
        raw = pairwise(union, union, block_size, max_workers).data
    else:
        raw = np.asarray(base, dtype=np.float64)
        if raw.shape != (union.count, union.count):
            raise MatrixShapeError(
                f"base distance has shape {raw.shape}, expected {(union.count, union.count)}"
            )
    rank = np.argsort(raw, axis=1, kind="stable")[:, : params.k1 + 1]

    v = _encode(raw, rank, params.k1)
    if params.k2 > 1:
        v = v[rank[:, : params.k2]].mean(axis=1)

    num_q = q.count
    step = max(1, block_size)
    blocks = [range(s, min(s + step, num_q)) for s in range(0, num_q, step)]
    if max_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            parts = list(executor.map(lambda rows: _jaccard_rows(v, rows), blocks))
    else:
        parts = [_jaccard_rows(v, rows) for rows in blocks]
    full = np.vstack(parts) if parts else np.zeros((0, union.count))

    offset = 0 if self_mode else num_q
    d_j = np.clip(full[:, offset:], 0.0, 1.0)
    raw_qg = raw[:num_q, offset:]
    if self_mode:
        np.fill_diagonal(d_j, 0.0)
    return d_j, raw_qg, q.row_ids(), gallery.row_ids()


def rerank(
    q: FeatureSet,
    g: Optional[FeatureSet],
    params: RerankParams,
    block_size: int = DEFAULT_BLOCK_SIZE,
    max_workers: int = 1,
    base: Optional[np.ndarray] = None,
) -> DistanceMatrix:
    """Blend the Jaccard distance with the raw distance.

    ``(1 - lambda) * d_jaccard + lambda * d_raw`` over query x gallery.
    Passing ``g=None`` (or the query set itself) re-ranks the set against
    itself.
    """
    d_j, raw_qg, row_ids, col_ids = _jaccard(q, g, params, block_size, max_workers, base)
    lam = params.lambda_value
    final = (1.0 - lam) * d_j + lam * raw_qg
    logger.debug(
        "Re-ranked %d x %d (k1=%d, k2=%d, lambda=%.2f)",
        final.shape[0],
        final.shape[1],
        params.k1,
        params.k2,
        lam,
    )
    return DistanceMatrix(final, row_ids, col_ids, DistanceKind.RERANKED)


def jaccard_only(
    q: FeatureSet,
    g: Optional[FeatureSet],
    params: RerankParams,
    block_size: int = DEFAULT_BLOCK_SIZE,
    max_workers: int = 1,
) -> DistanceMatrix:
    """The k-reciprocal Jaccard distance alone; ``lambda`` is ignored."""
    d_j, _, row_ids, col_ids = _jaccard(q, g, params, block_size, max_workers)
    return DistanceMatrix(d_j, row_ids, col_ids, DistanceKind.JACCARD)
