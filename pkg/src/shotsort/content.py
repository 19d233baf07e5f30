"""Signal-content metric, shot ranking and photon-number calibration.

The signal content is the area under the logarithm of a trace,
``sum ln(1 + max(v, 0)) * dt`` over an analysis window; ln(1+v) keeps the
metric finite on empty bins while preserving the ranking of strong shots.
Ranking windows start no earlier than 3 ns to exclude prompt artifacts
(an override exists for simulations).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import ShotSet
from .distance import Roi
from .errors import CalibrationRangeError, InvalidParameterError
from .simulate import sample_arrivals, stamp_photons
from .traces import DetectorKernel, Trace

MIN_RANKING_START_NS = 3.0


@dataclass(frozen=True)
class ContentRanking:
    """Per-shot signal content and the descending-content shot order
    (ties break toward the lower shot index)."""

    content: np.ndarray = field(repr=False)
    order: np.ndarray = field(repr=False)
    window: Roi

    def top(self, n: int) -> np.ndarray:
        return self.order[:n]


@dataclass(frozen=True)
class PhotonCalibration:
    """Lookup from photon number N to full-window content mean and spread."""

    entries: tuple  # ((N, content_mean, content_std), ...) ascending in N
    tail_window: Roi

    def __post_init__(self):
        ns = [e[0] for e in self.entries]
        if ns != sorted(ns):
            raise InvalidParameterError("calibration entries must be sorted in N")
        if any(e[2] < 0 for e in self.entries):
            raise InvalidParameterError("content_std must be non-negative")


def signal_content(shot: Trace, window: Roi) -> float:
    """Area under ln(1 + clamped trace) within the window."""
    lo, hi = shot.axis.roi_bins(window)
    v = np.maximum(shot.values[lo:hi], 0.0)
    return float(np.sum(np.log1p(v)) * shot.axis.dt_ns)


def _content_matrix(traces: np.ndarray, dt: float, lo: int, hi: int) -> np.ndarray:
    v = np.maximum(traces[:, lo:hi], 0.0)
    return np.log1p(v).sum(axis=1) * dt


def rank_shots(shots: ShotSet, window: Optional[Roi] = None,
               allow_early: bool = False) -> ContentRanking:
    """Rank all shots by signal content, highest first.

    The default window spans [3 ns, axis end). Windows starting before 3 ns
    are rejected unless allow_early is set (simulated data without prompt
    artifacts).
    """
    if window is None:
        window = Roi(max(MIN_RANKING_START_NS, shots.axis.t0_ns),
                     shots.axis.t_end_ns)
    if window.t_start_ns < MIN_RANKING_START_NS and not allow_early:
        raise InvalidParameterError(
            f"ranking window starts at {window.t_start_ns} ns; the first 3 ns "
            "are excluded (pass allow_early=True to override)"
        )
    lo, hi = shots.axis.roi_bins(window)
    content = _content_matrix(shots.traces, shots.axis.dt_ns, lo, hi)
    order = np.lexsort((np.arange(shots.n_shots), -content))
    return ContentRanking(content=content, order=order, window=window)


def calibrate_photon_number(avg: Trace, kernel: DetectorKernel,
                            n_values: Sequence[int], n_sims: int,
                            tail: Roi, full: Roi,
                            rng_seed: int = 0) -> PhotonCalibration:
    """Monte Carlo mapping from photon number to signal content.

    For each N, n_sims traces are built by drawing N arrivals from the
    averaged time-domain data and summing detector responses. The tail
    window (free of saturation) defines the reference content distribution;
    traces within 1 sigma of its mean provide the full-window content mean
    and spread recorded in the calibration table.
    """
    if n_sims < 100:
        raise InvalidParameterError(f"n_sims must be >= 100, got {n_sims}")
    density = np.maximum(avg.values, 0.0)
    axis = avg.axis
    tail_lo, tail_hi = axis.roi_bins(tail)
    full_lo, full_hi = axis.roi_bins(full)
    if density[tail_lo:tail_hi].sum() <= 0:
        raise InvalidParameterError("averaged trace has no mass in the tail window")
    dt = axis.dt_ns
    entries = []
    for n_idx, n_photons in enumerate(sorted(int(n) for n in n_values)):
        if n_photons == 0:
            entries.append((0, 0.0, 0.0))
            continue
        rng = np.random.default_rng([rng_seed, n_idx, n_photons])
        traces = np.empty((n_sims, axis.n_samples))
        for s in range(n_sims):
            arrivals = sample_arrivals(density, axis, n_photons, rng)
            traces[s] = stamp_photons(axis, kernel, arrivals)
        tail_content = _content_matrix(traces, dt, tail_lo, tail_hi)
        mean_t = tail_content.mean()
        std_t = tail_content.std()
        selected = np.abs(tail_content - mean_t) <= std_t
        if not np.any(selected):
            selected = np.ones(n_sims, dtype=bool)
        full_content = _content_matrix(traces[selected], dt, full_lo, full_hi)
        entries.append((n_photons, float(full_content.mean()),
                        float(full_content.std())))
    return PhotonCalibration(entries=tuple(entries), tail_window=tail)


def estimate_photons(content_full: float, cal: PhotonCalibration) -> tuple[float, float]:
    """Invert the calibration table for a measured full-window content.

    Piecewise-linear interpolation of content_mean(N); the uncertainty is
    the interpolated content spread divided by the local slope.
    """
    if len(cal.entries) < 2:
        raise InvalidParameterError("calibration needs at least 2 entries")
    ns = np.array([e[0] for e in cal.entries], dtype=np.float64)
    means = np.array([e[1] for e in cal.entries])
    stds = np.array([e[2] for e in cal.entries])
    if content_full < means[0] or content_full > means[-1]:
        nearest = cal.entries[0] if content_full < means[0] else cal.entries[-1]
        raise CalibrationRangeError(
            f"content {content_full:.6g} outside calibrated range "
            f"[{means[0]:.6g}, {means[-1]:.6g}]; nearest entry N={nearest[0]}",
            nearest=nearest,
        )
    seg = int(np.searchsorted(means, content_full, side="right")) - 1
    seg = min(max(seg, 0), len(ns) - 2)
    span = means[seg + 1] - means[seg]
    if span <= 0:
        raise InvalidParameterError(
            f"calibration means not increasing around N={ns[seg]:g}"
        )
    t = (content_full - means[seg]) / span
    n_est = ns[seg] + t * (ns[seg + 1] - ns[seg])
    slope = span / (ns[seg + 1] - ns[seg])
    sigma_c = (1.0 - t) * stds[seg] + t * stds[seg + 1]
    return float(n_est), float(sigma_c / slope)


def export_calibration_csv(cal: PhotonCalibration, path) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("N,content_mean,content_std\n")
        for n, mean, std in cal.entries:
            f.write(f"{n},{mean:.9g},{std:.9g}\n")
