"""Complete-linkage agglomerative clustering and silhouette-based quality."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .dataset import ShotSet
from .distance import DEFAULT_MODEL_FLOOR, DistanceMatrix, Roi
from .errors import InvalidParameterError
from .traces import Trace


@dataclass(frozen=True)
class Partition:
    """Assignment of members to k clusters.

    Cluster ids are renumbered 0..k-1 in order of each cluster's smallest
    member position, so results are stable under any merge bookkeeping.
    """

    k: int
    assignment: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.intp)
        if a.ndim != 1:
            raise InvalidParameterError("assignment must be one-dimensional")
        present = np.unique(a)
        if not np.array_equal(present, np.arange(self.k)):
            raise InvalidParameterError(
                f"assignment must use every cluster id in [0, {self.k})"
            )
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster_id)


@dataclass(frozen=True)
class SilhouetteReport:
    per_member: np.ndarray = field(repr=False)
    per_cluster_mean: np.ndarray
    quality: float


def _renumber(rep: np.ndarray) -> tuple[int, np.ndarray]:
    # rep holds min-member-index cluster ids; map to 0..k-1 by first appearance
    ids = np.unique(rep)
    lookup = {int(v): i for i, v in enumerate(ids)}
    return len(ids), np.array([lookup[int(v)] for v in rep], dtype=np.intp)


def agglomerate(dm: DistanceMatrix, k_target: int) -> Partition:
    """Merge singletons under complete linkage until k_target clusters remain.

    Each step joins the pair of clusters whose maximal pairwise member
    distance is smallest; ties break toward the smallest (min cluster id,
    then second id) pair.
    """
    if not 1 <= k_target <= dm.n:
        raise InvalidParameterError(
            f"k_target must be in [1, {dm.n}], got {k_target}"
        )
    rep, _ = _kernels.agglomerate_nb(dm.values, k_target)
    k, assignment = _renumber(rep)
    return Partition(k=k, assignment=assignment)


def merge_sequence(dm: DistanceMatrix, k_target: int) -> list[tuple[int, int]]:
    """The ordered (kept_id, absorbed_id) merge pairs; ids are min member indices."""
    if not 1 <= k_target <= dm.n:
        raise InvalidParameterError(
            f"k_target must be in [1, {dm.n}], got {k_target}"
        )
    _, merges = _kernels.agglomerate_nb(dm.values, k_target)
    return [(int(i), int(j)) for i, j in merges]


def cluster_model(shots: ShotSet, members: Sequence[int]) -> Trace:
    """Per-bin arithmetic mean over the member shots (full axis)."""
    members = np.asarray(members, dtype=np.intp)
    if members.size == 0:
        raise InvalidParameterError("cluster_model requires a non-empty member list")
    return Trace(axis=shots.axis, values=shots.traces[members].mean(axis=0))


def score_from_distances(d_own: float, d_other: float) -> float:
    """Silhouette score (d_other - d_own) / max(d_own, d_other); 0 if both 0."""
    denom = max(d_own, d_other)
    return (d_other - d_own) / denom if denom > 0 else 0.0


def silhouette(shots: ShotSet, members: Sequence[int], partition: Partition,
               roi: Roi, model_floor: float = DEFAULT_MODEL_FLOOR,
               normalize: bool = False) -> SilhouetteReport:
    """Silhouette scores of clustered shots against the cluster mean traces.

    The own-cluster distance uses a leave-one-out mean; members of singleton
    clusters score 0. Quality is the minimum of the per-cluster means.
    """
    if partition.k < 2:
        raise InvalidParameterError("silhouette requires at least 2 clusters")
    members = np.asarray(members, dtype=np.intp)
    if members.size != partition.assignment.size:
        raise InvalidParameterError(
            f"partition covers {partition.assignment.size} members, got "
            f"{members.size} member indices"
        )
    lo, hi = shots.axis.roi_bins(roi)
    counts = np.ascontiguousarray(shots.traces[members, lo:hi] * shots.axis.dt_ns)
    scores = _kernels.silhouette_scores_nb(
        counts, partition.assignment.astype(np.int64), model_floor, normalize)
    per_cluster = np.array([
        scores[partition.assignment == c].mean() for c in range(partition.k)
    ])
    return SilhouetteReport(per_member=scores, per_cluster_mean=per_cluster,
                            quality=float(per_cluster.min()))


def select_num_clusters(shots: ShotSet, members: Sequence[int], roi: Roi,
                        k_max: int, model_floor: float = DEFAULT_MODEL_FLOOR,
                        normalize: bool = False) -> tuple[int, np.ndarray]:
    """Pick the cluster count k in 2..k_max maximizing quality S.

    Returns (k_best, qualities) with qualities[i] the S for k = 2 + i.
    Ties resolve toward the smaller k.
    """
    members = np.asarray(members, dtype=np.intp)
    if not 2 <= k_max <= members.size - 1:
        raise InvalidParameterError(
            f"k_max must be in [2, {members.size - 1}], got {k_max}"
        )
    dm = _member_distance_matrix(shots, members, roi, model_floor)
    qualities = np.empty(k_max - 1)
    for k in range(2, k_max + 1):
        part = agglomerate(dm, k)
        rep_q = silhouette(shots, members, part, roi, model_floor, normalize)
        qualities[k - 2] = rep_q.quality
    k_best = 2 + int(np.argmax(qualities))
    return k_best, qualities


def _member_distance_matrix(shots, members, roi, model_floor):
    from .distance import distance_matrix

    return distance_matrix(shots, members, roi, model_floor)


def export_silhouette_csv(report: SilhouetteReport, partition: Partition, path) -> None:
    """Per-member silhouette bars as CSV (member position, cluster id, score)."""
    with open(path, "w", newline="\n") as f:
        f.write("member,cluster,score\n")
        for i, (c, s) in enumerate(zip(partition.assignment, report.per_member)):
            f.write(f"{i},{int(c)},{s:.9g}\n")
