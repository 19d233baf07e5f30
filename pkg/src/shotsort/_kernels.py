"""Compiled inner loops for clustering, silhouette scoring and ROI scans.

All functions work on per-bin count matrices (rate * dt). They are the
single implementation used both by the public clustering API and by the
quality-map scan, so scan cells and direct calls agree bit-for-bit.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def pairwise_sym_nll_nb(counts, model_floor):
    """Same contract as distance.pairwise_sym_nll, compiled."""
    n, m = counts.shape
    a = np.empty((n, m))
    log_b = np.empty((n, m))
    sum_b = np.empty(n)
    sum_g = np.empty(n)
    for i in range(n):
        sb = 0.0
        sg = 0.0
        for t in range(m):
            c = counts[i, t]
            ac = c if c > 0.0 else 0.0
            bc = c if c > model_floor else model_floor
            a[i, t] = ac
            log_b[i, t] = math.log(bc)
            sb += bc
            sg += math.lgamma(ac + 1.0)
        sum_b[i] = sb
        sum_g[i] = sg
    p = -np.dot(a, log_b.T)
    for i in range(n):
        for j in range(n):
            p[i, j] += sum_b[j] + sum_g[i]
    for i in range(n):
        for j in range(i + 1, n):
            v = max(p[i, j], p[j, i])
            p[i, j] = v
            p[j, i] = v
    return p


@njit(cache=True)
def agglomerate_nb(dm, k_target):
    """Complete-linkage merges down to k_target clusters.

    Cluster ids are the smallest member index. Each step merges the active
    pair with minimal linkage distance; ties break toward the smallest
    (min id, then second id) pair. Returns (rep, merges) where rep[i] is the
    final cluster id of point i and merges lists the (id_kept, id_absorbed)
    pairs in order.
    """
    n = dm.shape[0]
    rep = np.arange(n)
    link = dm.copy()
    active = np.ones(n, np.bool_)
    n_merges = n - k_target
    merges = np.empty((n_merges, 2), np.int64)
    for step in range(n_merges):
        best = np.inf
        bi = -1
        bj = -1
        for i in range(n):
            if not active[i]:
                continue
            for j in range(i + 1, n):
                if not active[j]:
                    continue
                if link[i, j] < best:
                    best = link[i, j]
                    bi = i
                    bj = j
        for m in range(n):
            if active[m] and m != bi and m != bj:
                v = max(link[bi, m], link[bj, m])
                link[bi, m] = v
                link[m, bi] = v
        active[bj] = False
        for p in range(n):
            if rep[p] == bj:
                rep[p] = bi
        merges[step, 0] = bi
        merges[step, 1] = bj
    return rep, merges


@njit(cache=True)
def _sym_nll_vs_model(data_counts, model_counts, model_floor):
    """max of the Poisson NLL in both directions for one shot/model pair."""
    m = data_counts.shape[0]
    p1 = 0.0
    p2 = 0.0
    for t in range(m):
        ac = data_counts[t] if data_counts[t] > 0.0 else 0.0
        mc = model_counts[t] if model_counts[t] > 0.0 else 0.0
        bf = model_counts[t] if model_counts[t] > model_floor else model_floor
        af = data_counts[t] if data_counts[t] > model_floor else model_floor
        p1 += -ac * math.log(bf) + bf + math.lgamma(ac + 1.0)
        p2 += -mc * math.log(af) + af + math.lgamma(mc + 1.0)
    return max(p1, p2)


@njit(cache=True)
def silhouette_scores_nb(counts, rep, model_floor, normalize):
    """Model-based silhouette scores for clustered count rows.

    d_own uses the leave-one-out mean of the own cluster, d_other the full
    mean of each other cluster (minimum over clusters). Singleton members
    score 0. With normalize, each distance is divided by the standard
    deviation of member-to-own-model distances of the respective cluster
    (skipped for singleton clusters).
    """
    n, m = counts.shape
    ids = np.unique(rep)
    k = ids.shape[0]
    sizes = np.zeros(k, np.int64)
    sums = np.zeros((k, m))
    idx_of = np.full(n, -1, np.int64)
    for c in range(k):
        for i in range(n):
            if rep[i] == ids[c]:
                idx_of[i] = c
                sizes[c] += 1
                for t in range(m):
                    sums[c, t] += counts[i, t]
    models = np.empty((k, m))
    for c in range(k):
        for t in range(m):
            models[c, t] = sums[c, t] / sizes[c]
    stds = np.zeros(k)
    if normalize:
        for c in range(k):
            if sizes[c] < 2:
                continue
            s = 0.0
            s2 = 0.0
            for i in range(n):
                if idx_of[i] != c:
                    continue
                d = _sym_nll_vs_model(counts[i], models[c], model_floor)
                s += d
                s2 += d * d
            mean = s / sizes[c]
            var = s2 / sizes[c] - mean * mean
            stds[c] = math.sqrt(var) if var > 0.0 else 0.0
    scores = np.zeros(n)
    loo = np.empty(m)
    for i in range(n):
        own = idx_of[i]
        if sizes[own] < 2:
            scores[i] = 0.0
            continue
        for t in range(m):
            loo[t] = (sums[own, t] - counts[i, t]) / (sizes[own] - 1)
        d_own = _sym_nll_vs_model(counts[i], loo, model_floor)
        if normalize and stds[own] > 0.0:
            d_own /= stds[own]
        d_other = np.inf
        for c in range(k):
            if c == own:
                continue
            d = _sym_nll_vs_model(counts[i], models[c], model_floor)
            if normalize and stds[c] > 0.0:
                d /= stds[c]
            if d < d_other:
                d_other = d
        denom = max(d_own, d_other)
        scores[i] = (d_other - d_own) / denom if denom > 0.0 else 0.0
    return scores


@njit(cache=True)
def clustering_quality_nb(scores, rep):
    """Minimum over clusters of the mean member silhouette score."""
    n = scores.shape[0]
    ids = np.unique(rep)
    quality = np.inf
    for c in range(ids.shape[0]):
        s = 0.0
        cnt = 0
        for i in range(n):
            if rep[i] == ids[c]:
                s += scores[i]
                cnt += 1
        mean = s / cnt
        if mean < quality:
            quality = mean
    return quality


@njit(cache=True, parallel=True)
def quality_map_scan_nb(counts, los, his, k_target, model_floor, normalize):
    """Clustering quality S for every ROI cell [los[c], his[c]) in bins."""
    n_cells = los.shape[0]
    out = np.empty(n_cells)
    for c in prange(n_cells):
        sub = np.ascontiguousarray(counts[:, los[c]:his[c]])
        dm = pairwise_sym_nll_nb(sub, model_floor)
        rep, _ = agglomerate_nb(dm, k_target)
        scores = silhouette_scores_nb(sub, rep, model_floor, normalize)
        out[c] = clustering_quality_nb(scores, rep)
    return out
