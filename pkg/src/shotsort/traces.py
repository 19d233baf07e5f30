"""Core trace representation, detector response kernel and Poisson uncertainty bands.

Traces are uniformly sampled, non-negative time series in photon-equivalent
rate units: after scaling with the single-photon pulse area, the integral
``sum(values) * dt_ns`` of an isolated photon pulse equals one photon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import InvalidParameterError

if TYPE_CHECKING:
    from .dataset import ShotSet
    from .distance import Roi

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

#: Kernel support is truncated at this many sigma and renormalized
#: to the exact area (truncation error < 1e-4 of the Gaussian mass).
KERNEL_TRUNCATION_SIGMA = 4.0


@dataclass(frozen=True)
class TimeAxis:
    """Uniform time grid; bin i sits at ``t0_ns + i * dt_ns``."""

    t0_ns: float
    dt_ns: float
    n_samples: int

    def __post_init__(self):
        if self.dt_ns <= 0:
            raise InvalidParameterError(f"dt_ns must be positive, got {self.dt_ns}")
        if self.n_samples < 2:
            raise InvalidParameterError(f"n_samples must be >= 2, got {self.n_samples}")

    @property
    def t_end_ns(self) -> float:
        return self.t0_ns + self.n_samples * self.dt_ns

    def times(self) -> np.ndarray:
        return self.t0_ns + self.dt_ns * np.arange(self.n_samples)

    def window_bins(self, t_start_ns: float, t_end_ns: float) -> tuple[int, int]:
        """Bin range [lo, hi) covering times t with t_start <= t < t_end.

        Raises if the window is empty or falls outside the axis span.
        """
        if t_end_ns <= t_start_ns:
            raise InvalidParameterError(
                f"empty window [{t_start_ns}, {t_end_ns}) ns"
            )
        eps = 1e-9 * self.dt_ns
        if t_start_ns < self.t0_ns - eps or t_end_ns > self.t_end_ns + eps:
            raise InvalidParameterError(
                f"window [{t_start_ns}, {t_end_ns}) ns outside axis span "
                f"[{self.t0_ns}, {self.t_end_ns}) ns"
            )
        lo = int(math.ceil((t_start_ns - self.t0_ns) / self.dt_ns - 1e-9))
        hi = int(math.ceil((t_end_ns - self.t0_ns) / self.dt_ns - 1e-9))
        lo = max(lo, 0)
        hi = min(hi, self.n_samples)
        if hi <= lo:
            raise InvalidParameterError(
                f"window [{t_start_ns}, {t_end_ns}) ns covers no bins"
            )
        return lo, hi

    def roi_bins(self, roi: "Roi") -> tuple[int, int]:
        return self.window_bins(roi.t_start_ns, roi.t_end_ns)


@dataclass(frozen=True)
class Trace:
    """One detector trace on a shared time axis (photon-equivalent rate per bin)."""

    axis: TimeAxis
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] != self.axis.n_samples:
            raise InvalidParameterError(
                f"trace length {v.shape} does not match axis n_samples "
                f"{self.axis.n_samples}"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidParameterError("trace contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def integral(self) -> float:
        """Integrated photon-equivalent count, sum(values) * dt."""
        return float(self.values.sum() * self.axis.dt_ns)


@dataclass(frozen=True)
class DetectorKernel:
    """Discretized single-photon detector response (Gaussian envelope)."""

    fwhm_ns: float
    area: float
    dt_ns: float
    samples: np.ndarray = field(repr=False)

    @property
    def sigma_ns(self) -> float:
        return self.fwhm_ns * FWHM_TO_SIGMA

    @property
    def half_width(self) -> int:
        return len(self.samples) // 2


@dataclass(frozen=True)
class UncertaintyBand:
    """Mean trace plus a per-bin 1-sigma array in the same rate units."""

    mean: Trace
    sigma: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=np.float64)
        if s.shape != self.mean.values.shape:
            raise InvalidParameterError("sigma length does not match mean trace")
        if np.any(s < 0):
            raise InvalidParameterError("sigma must be non-negative")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)


def detector_kernel(fwhm_ns: float, dt_ns: float, area: float = 1.0) -> DetectorKernel:
    """Gaussian single-photon response sampled on a dt grid.

    The kernel is truncated at +-4 sigma and renormalized so that
    ``sum(samples) * dt_ns == area`` exactly.
    """
    if fwhm_ns <= 0 or dt_ns <= 0 or area <= 0:
        raise InvalidParameterError(
            f"fwhm_ns, dt_ns and area must be positive, got "
            f"({fwhm_ns}, {dt_ns}, {area})"
        )
    sigma = fwhm_ns * FWHM_TO_SIGMA
    half = int(math.floor(KERNEL_TRUNCATION_SIGMA * sigma / dt_ns))
    offsets = np.arange(-half, half + 1) * dt_ns
    samples = np.exp(-0.5 * (offsets / sigma) ** 2)
    samples *= area / (samples.sum() * dt_ns)
    return DetectorKernel(fwhm_ns=fwhm_ns, area=area, dt_ns=dt_ns, samples=samples)


def photon_equivalents(raw: Trace, single_photon_area: float) -> Trace:
    """Scale a raw trace to photon-equivalent units.

    Divides by the single-photon pulse area so that one isolated photon
    integrates to 1; negative (noise) samples are clamped to 0 afterwards.
    """
    if single_photon_area <= 0:
        raise InvalidParameterError(
            f"single_photon_area must be positive, got {single_photon_area}"
        )
    scaled = np.maximum(raw.values / single_photon_area, 0.0)
    return Trace(axis=raw.axis, values=scaled)


def poisson_band(shots: "ShotSet", members: Sequence[int]) -> UncertaintyBand:
    """Per-bin mean and Poisson 1-sigma over a set of member shots.

    With per-bin counts c = value * dt summed over the M members,
    sigma per bin is sqrt(sum c) / M, reported back in rate units.
    """
    members = np.asarray(members, dtype=np.intp)
    if members.size == 0:
        raise InvalidParameterError("poisson_band requires a non-empty member list")
    dt = shots.axis.dt_ns
    sub = shots.traces[members]
    m = members.size
    mean = sub.mean(axis=0)
    counts = np.maximum(sub * dt, 0.0).sum(axis=0)
    sigma = np.sqrt(counts) / m / dt
    return UncertaintyBand(mean=Trace(axis=shots.axis, values=mean), sigma=sigma)
