"""Brute-force reference computations the engine is checked against.

Nothing here imports engine code; every routine works on plain arrays and
Python loops so a shared bug cannot hide on both sides.
"""

from collections import deque

import numpy as np


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Double-loop 2 - 2 cos distances between unit rows."""
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = min(4.0, max(0.0, 2.0 - 2.0 * float(np.dot(a[i], b[j]))))
    return out


def rerank_reference(
    q: np.ndarray, g: np.ndarray, k1: int, k2: int, lam: float, base: np.ndarray = None
) -> np.ndarray:
    """k-reciprocal re-ranking written step by step.

    Neighbor lists include the point itself and break ties by index. The
    expansion uses k1 // 2 and the test 3 |R(p) & R(c)| >= 2 |R(c)|.
    """
    x = np.vstack([q, g]).astype(np.float64)
    n = x.shape[0]
    if base is None:
        dist = squared_distances(x, x)
        for i in range(n):
            dist[i, i] = 0.0
    else:
        dist = np.array(base, dtype=np.float64)

    order = [sorted(range(n), key=lambda j, i=i: (dist[i, j], j)) for i in range(n)]

    def neighbors(i, k):
        return order[i][: k + 1]

    def reciprocal(i, k):
        return [j for j in neighbors(i, k) if i in neighbors(j, k)]

    v = np.zeros((n, n))
    for i in range(n):
        core = reciprocal(i, k1)
        expanded = set(core)
        for c in core:
            sub = reciprocal(c, k1 // 2)
            if 3 * len(set(sub) & set(core)) >= 2 * len(sub):
                expanded |= set(sub)
        weights = {j: np.exp(-dist[i, j]) for j in expanded}
        total = sum(weights.values())
        for j, w in weights.items():
            v[i, j] = w / total

    if k2 > 1:
        smoothed = np.zeros_like(v)
        for i in range(n):
            for j in order[i][:k2]:
                smoothed[i] += v[j]
            smoothed[i] /= k2
        v = smoothed

    nq = q.shape[0]
    out = np.zeros((nq, n - nq))
    for a in range(nq):
        for b in range(nq, n):
            lo = sum(min(v[a, j], v[b, j]) for j in range(n))
            hi = sum(max(v[a, j], v[b, j]) for j in range(n))
            jaccard = 1.0 - lo / hi if hi > 0 else 1.0
            out[a, b - nq] = (1.0 - lam) * jaccard + lam * dist[a, b]
    return out


def dbscan_reference(d: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Textbook DBSCAN: core points, then breadth-first density reachability.

    Points are scanned in index order; a border point keeps the first
    cluster that reaches it.
    """
    n = d.shape[0]
    neighborhoods = [[j for j in range(n) if d[i, j] <= eps] for i in range(n)]
    core = [len(nb) >= min_samples for nb in neighborhoods]
    labels = [-1] * n
    cluster = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for j in neighborhoods[p]:
                if labels[j] == -1:
                    labels[j] = cluster
                    queue.append(j)
        cluster += 1
    return np.array(labels)


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    """Equal up to renumbering of the non-noise labels."""
    if a.shape != b.shape or not np.array_equal(a == -1, b == -1):
        return False
    forward, backward = {}, {}
    for x, y in zip(a.tolist(), b.tolist()):
        if x == -1:
            continue
        if forward.setdefault(x, y) != y or backward.setdefault(y, x) != x:
            return False
    return True


def average_precision(
    ranked_identities: list, query_identity: int, num_relevant: int, top_k: int = 0
) -> float:
    """AP from first principles over an already filtered ranked list."""
    hits = 0
    total = 0.0
    limit = len(ranked_identities) if top_k == 0 else min(top_k, len(ranked_identities))
    for position in range(limit):
        if ranked_identities[position] == query_identity:
            hits += 1
            total += hits / (position + 1)
    denominator = num_relevant if top_k == 0 else min(num_relevant, top_k)
    return total / denominator
