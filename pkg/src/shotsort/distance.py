"""Poissonian log-likelihood distance between traces.

Traces are rates; the likelihood is evaluated on per-bin counts
``a_i = max(value_i * dt, 0)`` against model counts clamped from below at
``model_floor`` (a small background rate that keeps -a*ln(b) finite on
empty model bins). The factorial generalizes to Gamma(a+1) for the
non-integer counts produced by photon-equivalent scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .dataset import ShotSet
from .errors import InvalidParameterError
from .traces import Trace

DEFAULT_MODEL_FLOOR = 1e-3


@dataclass(frozen=True)
class Roi:
    """Half-open analysis window [t_start, t_end) on the time axis."""

    t_start_ns: float
    t_end_ns: float

    def __post_init__(self):
        if not self.t_end_ns > self.t_start_ns:
            raise InvalidParameterError(
                f"ROI end {self.t_end_ns} ns must exceed start {self.t_start_ns} ns"
            )

    @property
    def width_ns(self) -> float:
        return self.t_end_ns - self.t_start_ns


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric pairwise distance matrix; the diagonal is stored as computed
    (self-distance under the Poisson NLL is nonzero)."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidParameterError(f"distance matrix must be square, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidParameterError("distance matrix contains non-finite values")
        if not np.array_equal(v, v.T):
            raise InvalidParameterError("distance matrix must be symmetric")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _check_pair(data: Trace, model: Trace, model_floor: float):
    if data.axis != model.axis:
        raise InvalidParameterError("data and model are on different time axes")
    if model_floor <= 0:
        raise InvalidParameterError(f"model_floor must be positive, got {model_floor}")


def poisson_nll(data: Trace, model: Trace, roi: Roi,
                model_floor: float = DEFAULT_MODEL_FLOOR) -> float:
    """Negative Poisson log-likelihood of the data counts given the model.

    Sum over ROI bins of ``-a*ln(b) + b + ln Gamma(a+1)`` with a the clamped
    data counts and b the floored model counts.
    """
    _check_pair(data, model, model_floor)
    lo, hi = data.axis.roi_bins(roi)
    dt = data.axis.dt_ns
    a = np.maximum(data.values[lo:hi] * dt, 0.0)
    b = np.maximum(model.values[lo:hi] * dt, model_floor)
    return float(np.sum(-a * np.log(b) + b + gammaln(a + 1.0)))


def sym_distance(a: Trace, b: Trace, roi: Roi,
                 model_floor: float = DEFAULT_MODEL_FLOOR) -> float:
    """Symmetrized distance: the maximum of the NLL in both directions."""
    return max(poisson_nll(a, b, roi, model_floor),
               poisson_nll(b, a, roi, model_floor))


def distance_matrix(shots: ShotSet, members: Sequence[int], roi: Roi,
                    model_floor: float = DEFAULT_MODEL_FLOOR) -> DistanceMatrix:
    """Pairwise symmetrized distances between the given member shots."""
    members = np.asarray(members, dtype=np.intp)
    if len(set(members.tolist())) != members.size:
        raise InvalidParameterError("member indices must be distinct")
    if model_floor <= 0:
        raise InvalidParameterError(f"model_floor must be positive, got {model_floor}")
    lo, hi = shots.axis.roi_bins(roi)
    dt = shots.axis.dt_ns
    counts = shots.traces[members, lo:hi] * dt
    values = pairwise_sym_nll(counts, model_floor)
    return DistanceMatrix(values=values)


def pairwise_sym_nll(counts: np.ndarray, model_floor: float) -> np.ndarray:
    """Symmetrized NLL matrix for rows of a per-bin count matrix.

    ``P[i, j] = -A[i] . ln(B[j]) + sum(B[j]) + sum(lnGamma(A[i]+1))`` with
    A the rows clamped at 0 (data role) and B clamped at the floor (model
    role); the result is ``max(P, P.T)``.
    """
    a = np.maximum(counts, 0.0)
    b = np.maximum(counts, model_floor)
    log_b = np.log(b)
    p = -a @ log_b.T + b.sum(axis=1)[None, :] + gammaln(a + 1.0).sum(axis=1)[:, None]
    return np.maximum(p, p.T)
