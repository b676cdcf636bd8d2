"""Ranking with camera verification, image-to-track retrieval and mAP/CMC scoring."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from components.errors import (
    AlignmentError,
    ConfigError,
    EmptyCandidatesError,
    EmptyQueryError,
    MissingIdentityError,
)
from components.feature_ops import group_tracklets
from components.models import (
    DistanceMatrix,
    EvalReport,
    ImageMeta,
    RankedQuery,
    RankList,
)

logger = logging.getLogger(__name__)

MASKED = np.inf
"""Sentinel written into distance entries removed by camera verification."""


def _check_metas(d: DistanceMatrix, q_metas: Sequence[ImageMeta], g_metas: Sequence[ImageMeta]) -> None:
    if len(q_metas) != d.shape[0] or len(g_metas) != d.shape[1]:
        raise AlignmentError(
            f"metadata ({len(q_metas)} x {len(g_metas)}) does not match "
            f"the distance matrix {d.shape}"
        )
    for axis, ids, metas in (("row", d.row_ids, q_metas), ("column", d.col_ids, g_metas)):
        for index, (image_id, m) in enumerate(zip(ids, metas)):
            if image_id != m.image_id:
                raise AlignmentError(
                    f"distance {axis} {index} is {image_id} but its metadata names {m.image_id}"
                )


def camera_verify_mask(
    d: DistanceMatrix, q_metas: Sequence[ImageMeta], g_metas: Sequence[ImageMeta]
) -> DistanceMatrix:
    """Mask every gallery candidate seen by the query's own camera."""
    _check_metas(d, q_metas, g_metas)
    q_cams = np.array([m.camera_id for m in q_metas], dtype=np.int64)
    g_cams = np.array([m.camera_id for m in g_metas], dtype=np.int64)
    same = q_cams[:, None] == g_cams[None, :]
    data = np.where(same, MASKED, d.data)
    if d.shape[1]:
        empty = np.flatnonzero(np.isinf(data).all(axis=1))
        if empty.size:
            raise EmptyCandidatesError(q_metas[int(empty[0])].image_id)
    logger.debug("Camera verification masked %d of %d entries", int(same.sum()), same.size)
    return DistanceMatrix(data, d.row_ids, d.col_ids, d.kind, masked=True)


def rank(
    d: DistanceMatrix,
    top_k: int,
    i2t: bool = False,
    g_metas: Optional[Sequence[ImageMeta]] = None,
) -> RankList:
    """Sort every query's gallery by ascending distance.

    Ties go to the lower gallery index and masked entries never appear. In
    image-to-track mode each tracklet is scored by its closest member and
    its members are listed together, carrying the tracklet score.
    """
    if int(top_k) != top_k or top_k < 1:
        raise ConfigError("evaluation.top_k", f"must be a positive integer, got {top_k}")
    masked = np.isinf(d.data)
    if i2t:
        if g_metas is None or len(g_metas) != d.shape[1]:
            raise AlignmentError("image-to-track ranking needs gallery metadata per column")
        groups = [np.asarray(rows, dtype=np.int64) for rows in group_tracklets(g_metas).values()]
    queries = []
    order = np.argsort(d.data, axis=1, kind="stable")
    for i, query_id in enumerate(d.row_ids):
        row = d.data[i]
        hidden = frozenset(int(j) for j in np.flatnonzero(masked[i]))
        if i2t:
            indices, distances = _rank_tracklets(row, groups, top_k)
        else:
            visible = [int(j) for j in order[i] if not masked[i, j]][:top_k]
            indices, distances = visible, [float(row[j]) for j in visible]
        queries.append(
            RankedQuery(
                query_id=query_id,
                gallery_ids=tuple(d.col_ids[j] for j in indices),
                gallery_indices=tuple(indices),
                distances=tuple(distances),
                masked_indices=hidden,
            )
        )
    return RankList(queries=tuple(queries), top_k=int(top_k), i2t=i2t)


def _rank_tracklets(
    row: np.ndarray, groups: list[np.ndarray], top_k: int
) -> tuple[list[int], list[float]]:
    scored = []
    for first, members in enumerate(groups):
        live = members[np.isfinite(row[members])]
        if live.size:
            live = live[np.lexsort((live, row[live]))]
            scored.append((float(row[live[0]]), int(members.min()), first, live))
    scored.sort(key=lambda item: (item[0], item[1]))
    indices: list[int] = []
    distances: list[float] = []
    for score, _, _, live in scored:
        for j in live:
            if len(indices) == top_k:
                return indices, distances
            indices.append(int(j))
            distances.append(score)
    return indices, distances


def evaluate(
    rl: RankList,
    q_metas: Sequence[ImageMeta],
    g_metas: Sequence[ImageMeta],
    top_k_map: int = 100,
    same_camera_relevants: bool = True,
) -> EvalReport:
    """Mean average precision and CMC of a ranking against ground truth.

    AP is the sum of precision at every relevant hit within the first
    ``top_k_map`` candidates (0 = the full list), divided by the number of
    relevant gallery images capped at ``top_k_map``. Queries with no
    relevant gallery image are left out. With ``same_camera_relevants``
    off, gallery images sharing the query's camera and identity are
    neither candidates nor relevants; masked entries never are.
    """
    if not rl.queries:
        raise EmptyQueryError("no queries to evaluate")
    if len(q_metas) != len(rl.queries):
        raise AlignmentError(f"{len(q_metas)} query records for {len(rl.queries)} ranked queries")
    if top_k_map < 0:
        raise ConfigError("evaluation.top_k_map", f"must be >= 0, got {top_k_map}")
    for m in list(q_metas) + list(g_metas):
        if m.identity is None:
            raise MissingIdentityError(m.image_id)

    g_image_ids = [m.image_id for m in g_metas]
    for rq, qm in zip(rl.queries, q_metas):
        if rq.query_id != qm.image_id:
            raise AlignmentError(f"ranked query {rq.query_id} is scored against {qm.image_id}")
        for j, gallery_id in zip(rq.gallery_indices, rq.gallery_ids):
            if j >= len(g_image_ids) or g_image_ids[j] != gallery_id:
                raise AlignmentError(
                    f"query {rq.query_id} ranks {gallery_id} at gallery index {j}, "
                    "which the gallery metadata does not hold"
                )

    g_ids = np.array([m.identity for m in g_metas], dtype=np.int64)
    g_cams = np.array([m.camera_id for m in g_metas], dtype=np.int64)
    per_query_ap: dict[str, float] = {}
    hits = np.zeros(rl.top_k, dtype=np.float64)
    skipped: list[str] = []
    for rq, qm in zip(rl.queries, q_metas):
        excluded = np.zeros(g_ids.size, dtype=bool)
        if rq.masked_indices:
            excluded[list(rq.masked_indices)] = True
        if not same_camera_relevants:
            excluded |= (g_ids == qm.identity) & (g_cams == qm.camera_id)
        num_rel = int(((g_ids == qm.identity) & ~excluded).sum())
        if num_rel == 0:
            skipped.append(rq.query_id)
            continue
        listed = [j for j in rq.gallery_indices if not excluded[j]]
        relevant = g_ids[listed] == qm.identity if listed else np.zeros(0, dtype=bool)

        scored = relevant[:top_k_map] if top_k_map else relevant
        denominator = min(num_rel, top_k_map) if top_k_map else num_rel
        precision = np.cumsum(scored) / np.arange(1, scored.size + 1)
        per_query_ap[rq.query_id] = float((precision * scored).sum() / denominator)

        first_hit = np.flatnonzero(relevant[: rl.top_k])
        if first_hit.size:
            hits[first_hit[0]:] += 1

    valid = len(per_query_ap)
    if skipped:
        logger.warning("%d queries have no relevant gallery image and were skipped", len(skipped))
    mean_ap = float(np.mean(list(per_query_ap.values()))) if valid else 0.0
    cmc = hits / valid if valid else hits
    return EvalReport(
        mAP=mean_ap,
        cmc=cmc,
        per_query_ap=per_query_ap,
        num_queries=len(rl.queries),
        skipped_queries=tuple(skipped),
    )


def write_ranking(path: Path | str, rl: RankList) -> Path:
    """One ``query_id: g1 g2 ... gK`` line per query."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rq in rl.queries:
            f.write(f"{rq.query_id}: {' '.join(rq.gallery_ids)}\n")
    return path


def write_report(path: Path | str, report: EvalReport) -> Path:
    """Dump the report summary and its CMC curve as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    return path
