"""Independent brute-force reference implementations used as test oracles."""

import math

import numpy as np


def nll_factorial(counts, model_counts, model_floor):
    """Poisson NLL via explicit factorials, for integer data counts."""
    total = 0.0
    for a, b in zip(counts, model_counts):
        b = max(b, model_floor)
        total += -a * math.log(b) + b + math.log(math.factorial(int(a)))
    return total


def complete_linkage_reference(dm, k_target):
    """Exhaustive complete-linkage agglomeration.

    Clusters are keyed by their minimal member index. Each step scans every
    cluster pair, computes the maximal pairwise member distance, and merges
    the pair with the smallest linkage; ties break toward the smallest
    (min id, second id) pair. Returns (assignment, merges) with merges a
    list of (kept_id, absorbed_id).
    """
    n = dm.shape[0]
    clusters = {i: [i] for i in range(n)}
    merges = []
    while len(clusters) > k_target:
        best = None
        ids = sorted(clusters)
        for pos, i in enumerate(ids):
            for j in ids[pos + 1:]:
                link = max(dm[a, b] for a in clusters[i] for b in clusters[j])
                key = (link, i, j)
                if best is None or key < best:
                    best = key
        _, i, j = best
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
        merges.append((i, j))
    rep = np.empty(n, dtype=np.intp)
    for cid, members in clusters.items():
        for m in members:
            rep[m] = cid
    ids = np.unique(rep)
    lookup = {int(v): idx for idx, v in enumerate(ids)}
    assignment = np.array([lookup[int(v)] for v in rep], dtype=np.intp)
    return assignment, merges
