"""End-to-end orchestration: parameter optimization, model building,
full-dataset sorting, class averaging and stability/consistency checks."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .cluster import Partition, agglomerate, cluster_model, silhouette
from .content import rank_shots
from .dataset import ShotSet
from .distance import DEFAULT_MODEL_FLOOR, Roi, distance_matrix, poisson_nll
from .errors import DegenerateClassError, InvalidParameterError
from .traces import Trace, UncertaintyBand, poisson_band

# Small candidate counts are excluded by default: a silhouette estimated from
# a few dozen shots, maximized over the ~10^4-cell ROI grid, is dominated by
# selection bias toward lucky one-bin splits, and the resulting class models
# are too noisy to sort dim shots reliably.
DEFAULT_N_HS_CANDIDATES = (100, 150, 200)


@dataclass(frozen=True)
class AnalysisParams:
    n_hs: int
    roi: Roi
    k: int = 2
    model_floor: float = DEFAULT_MODEL_FLOOR

    def __post_init__(self):
        if not self.n_hs >= self.k >= 2:
            raise InvalidParameterError(
                f"need n_hs >= k >= 2, got n_hs={self.n_hs}, k={self.k}"
            )
        if self.model_floor <= 0:
            raise InvalidParameterError("model_floor must be positive")


@dataclass(frozen=True)
class QualityMap:
    """Clustering quality S over the (roi start, roi end) grid for one n_hs.

    grid[i, j] is the quality for ROI [start_ns[i], end_ns[j]); cells with
    end <= start are invalid and hold NaN.
    """

    n_hs: int
    start_ns: np.ndarray
    end_ns: np.ndarray
    grid: np.ndarray = field(repr=False)
    step_ns: float = 1.0

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.grid)

    def best_cell(self) -> tuple[float, float, float]:
        """(S, start, end) of the maximum; ties resolve to the earliest
        start, then the shortest ROI."""
        best = (-np.inf, 0.0, 0.0)
        for i, start in enumerate(self.start_ns):
            for j, end in enumerate(self.end_ns):
                v = self.grid[i, j]
                if not np.isnan(v) and v > best[0]:
                    best = (float(v), float(start), float(end))
        if not np.isfinite(best[0]):
            raise InvalidParameterError("quality map has no valid cell")
        return best


@dataclass(frozen=True)
class SortResult:
    models: tuple  # k Traces
    assignment: np.ndarray = field(repr=False)
    class_curves: tuple = ()  # k UncertaintyBands
    scale_factors: tuple = ()


def smooth_quality_map(qm: QualityMap, sigma_ns: float) -> QualityMap:
    """Gaussian-weighted moving average over valid cells only.

    Weights are renormalized per cell so masked (invalid) neighbours do not
    bias the average; sigma 0 returns the map unchanged. The kernel is
    truncated at 4 sigma.
    """
    if sigma_ns < 0:
        raise InvalidParameterError(f"sigma_ns must be >= 0, got {sigma_ns}")
    if sigma_ns == 0:
        return qm
    valid = qm.valid
    filled = np.where(valid, qm.grid, 0.0)
    mask = valid.astype(np.float64)
    radius = int(math.ceil(4.0 * sigma_ns / qm.step_ns))
    num = np.zeros_like(filled)
    den = np.zeros_like(filled)
    n_i, n_j = filled.shape
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            w = math.exp(-0.5 * (di * di + dj * dj)
                         * (qm.step_ns / sigma_ns) ** 2)
            if abs(di) >= n_i or abs(dj) >= n_j:
                continue
            src_i = slice(max(0, -di), min(n_i, n_i - di))
            dst_i = slice(max(0, di), min(n_i, n_i + di))
            src_j = slice(max(0, -dj), min(n_j, n_j - dj))
            dst_j = slice(max(0, dj), min(n_j, n_j + dj))
            num[dst_i, dst_j] += w * filled[src_i, src_j]
            den[dst_i, dst_j] += w * mask[src_i, src_j]
    with np.errstate(invalid="ignore"):
        smoothed = np.where(valid, num / np.where(den > 0, den, 1.0), np.nan)
    return replace(qm, grid=smoothed)


def _roi_grid(axis, step_ns: float, min_start_ns: float):
    t_end = axis.t_end_ns
    starts = []
    s = min_start_ns
    while s + step_ns <= t_end + 1e-9:
        starts.append(s)
        s += step_ns
    ends = []
    e = min_start_ns + step_ns
    while e <= t_end + 1e-9:
        ends.append(e)
        e += step_ns
    if not starts or not ends:
        raise InvalidParameterError("ROI grid has no valid cell")
    return np.array(starts), np.array(ends)


def compute_quality_map(shots: ShotSet, members: Sequence[int], k: int,
                        step_ns: float = 1.0, min_start_ns: float = 3.0,
                        model_floor: float = DEFAULT_MODEL_FLOOR) -> QualityMap:
    """Quality S of k-cluster solutions for every ROI on a uniform grid."""
    members = np.asarray(members, dtype=np.intp)
    starts, ends = _roi_grid(shots.axis, step_ns, min_start_ns)
    axis = shots.axis
    counts = np.ascontiguousarray(shots.traces[members] * axis.dt_ns)
    cells = []
    los = []
    his = []
    for i, s in enumerate(starts):
        for j, e in enumerate(ends):
            if e <= s + 1e-9:
                continue
            lo, hi = axis.window_bins(s, e)
            cells.append((i, j))
            los.append(lo)
            his.append(hi)
    values = _kernels.quality_map_scan_nb(
        counts, np.array(los, dtype=np.int64), np.array(his, dtype=np.int64),
        k, model_floor, False)
    grid = np.full((len(starts), len(ends)), np.nan)
    for (i, j), v in zip(cells, values):
        grid[i, j] = v
    return QualityMap(n_hs=len(members), start_ns=starts, end_ns=ends,
                      grid=grid, step_ns=step_ns)


def optimize_parameters(shots: ShotSet,
                        n_hs_candidates: Sequence[int] = DEFAULT_N_HS_CANDIDATES,
                        k: int = 2, roi_step_ns: float = 1.0,
                        roi_min_start_ns: float = 3.0, sigma_ns: float = 1.0,
                        model_floor: float = DEFAULT_MODEL_FLOOR,
                        rank_window: Optional[Roi] = None,
                        allow_early: bool = False
                        ) -> tuple[AnalysisParams, dict]:
    """Scan (n_hs, ROI start, ROI end) for the best smoothed clustering quality.

    Returns the chosen parameters and the smoothed QualityMap per candidate
    n_hs. Ties resolve toward larger n_hs, then earlier ROI start, then
    shorter ROI.
    """
    candidates = sorted(set(int(n) for n in n_hs_candidates))
    if not candidates:
        raise InvalidParameterError("need at least one n_hs candidate")
    if any(n < k + 1 for n in candidates):
        raise InvalidParameterError(
            f"every n_hs candidate must be >= k+1 = {k + 1}"
        )
    candidates = [n for n in candidates if n <= shots.n_shots]
    if not candidates:
        raise InvalidParameterError("all n_hs candidates exceed the shot count")
    ranking = rank_shots(shots, window=rank_window, allow_early=allow_early)
    maps = {}
    best = None  # (S, n_hs, -start, -width)
    best_cell = None
    for n_hs in candidates:
        qm = compute_quality_map(shots, ranking.top(n_hs), k,
                                 step_ns=roi_step_ns,
                                 min_start_ns=roi_min_start_ns,
                                 model_floor=model_floor)
        qm = smooth_quality_map(qm, sigma_ns)
        maps[n_hs] = qm
        s_val, start, end = qm.best_cell()
        key = (s_val, n_hs, -start, -(end - start))
        if best is None or key > best:
            best = key
            best_cell = (n_hs, start, end)
    n_hs, start, end = best_cell
    params = AnalysisParams(n_hs=n_hs, roi=Roi(start, end), k=k,
                            model_floor=model_floor)
    return params, maps


def build_models(shots: ShotSet, params: AnalysisParams,
                 rank_window: Optional[Roi] = None,
                 allow_early: bool = False) -> tuple:
    """Cluster the top-n_hs shots in the ROI and average each cluster
    over the full axis."""
    ranking = rank_shots(shots, window=rank_window, allow_early=allow_early)
    top = ranking.top(params.n_hs)
    if top.size < params.n_hs:
        raise InvalidParameterError(
            f"set has only {top.size} shots, need n_hs={params.n_hs}"
        )
    if params.k == 1:
        return (cluster_model(shots, top),)
    dm = distance_matrix(shots, top, params.roi, params.model_floor)
    part = agglomerate(dm, params.k)
    return tuple(cluster_model(shots, top[part.members(c)])
                 for c in range(part.k))


def sort_shots(shots: ShotSet, models: Sequence[Trace], roi: Roi,
               model_floor: float = DEFAULT_MODEL_FLOOR) -> np.ndarray:
    """Assign every shot to the model with minimal Poisson NLL in the ROI.

    Ties go to the lower model id (argmin takes the first minimum).
    """
    if model_floor <= 0:
        raise InvalidParameterError("model_floor must be positive")
    axis = shots.axis
    for m in models:
        if m.axis != axis:
            raise InvalidParameterError("models must share the shot-set axis")
    lo, hi = axis.roi_bins(roi)
    dt = axis.dt_ns
    a = np.maximum(shots.traces[:, lo:hi] * dt, 0.0)
    lg = gammaln(a + 1.0).sum(axis=1)
    nll = np.empty((len(models), shots.n_shots))
    for j, m in enumerate(models):
        b = np.maximum(m.values[lo:hi] * dt, model_floor)
        nll[j] = -a @ np.log(b) + b.sum() + lg
    return np.argmin(nll, axis=0)


def class_average(shots: ShotSet, assignment: np.ndarray,
                  k: Optional[int] = None) -> tuple:
    """Poisson uncertainty band per class over the assigned members."""
    assignment = np.asarray(assignment)
    if k is None:
        k = int(assignment.max()) + 1
    bands = []
    for c in range(k):
        members = np.flatnonzero(assignment == c)
        if members.size == 0:
            raise DegenerateClassError(f"class {c} has no assigned shots", c)
        bands.append(poisson_band(shots, members))
    return tuple(bands)


def fit_scale(x: Trace, y: Trace, window: Roi) -> float:
    """Least-squares overall scaling alpha minimizing |y - alpha*x| in the window."""
    if x.axis != y.axis:
        raise InvalidParameterError("traces are on different time axes")
    lo, hi = x.axis.roi_bins(window)
    xv = x.values[lo:hi]
    yv = y.values[lo:hi]
    denom = float(np.dot(xv, xv))
    if denom <= 0:
        raise InvalidParameterError("fit window has zero trace energy")
    return float(np.dot(xv, yv) / denom)


def _match_to_reference(curves: Sequence[Trace], reference: Sequence[Trace],
                        roi: Roi, model_floor: float) -> tuple[int, ...]:
    """Best class permutation: perm[j] = reference index for curve j,
    minimizing the total Poisson NLL of curves against references."""
    k = len(curves)
    best_perm = None
    best_cost = np.inf
    for perm in itertools.permutations(range(k)):
        cost = sum(poisson_nll(curves[j], reference[perm[j]], roi, model_floor)
                   for j in range(k))
        if cost < best_cost:
            best_cost = cost
            best_perm = perm
    return best_perm


@dataclass(frozen=True)
class StabilityResult:
    """Resampling spread of the reconstructed class curves.

    class_std[c] is the per-bin standard deviation over all matched subset
    reconstructions of class c; full_curves are the whole-dataset bands the
    runs were matched against.
    """

    full_models: tuple
    full_assignment: np.ndarray = field(repr=False)
    full_curves: tuple = ()
    class_mean: np.ndarray = field(default=None, repr=False)
    class_std: np.ndarray = field(default=None, repr=False)
    n_runs: int = 0
    n_skipped: int = 0


def stability_analysis(shots: ShotSet, params: AnalysisParams,
                       n_subsets: int = 5, n_reps: int = 10,
                       rng_seed: int = 0,
                       rank_window: Optional[Roi] = None,
                       allow_early: bool = False) -> StabilityResult:
    """Repeat the full pipeline on random equal subsets of the data.

    Each repetition splits the set into n_subsets parts, rebuilds models,
    sorts and averages per subset, and matches the recovered classes to the
    full-run models by minimal total Poisson NLL under the best class
    permutation. Runs that leave a class empty are skipped and counted.
    """
    if shots.n_shots // n_subsets < params.n_hs:
        raise InvalidParameterError(
            f"subsets of ~{shots.n_shots // n_subsets} shots are smaller than "
            f"n_hs={params.n_hs}"
        )
    full_models = build_models(shots, params, rank_window, allow_early)
    full_assignment = sort_shots(shots, full_models, params.roi,
                                 params.model_floor)
    full_curves = class_average(shots, full_assignment, params.k)
    k = params.k
    runs = []
    n_skipped = 0
    for rep in range(n_reps):
        rng = np.random.default_rng([rng_seed, rep])
        perm = rng.permutation(shots.n_shots)
        bounds = np.linspace(0, shots.n_shots, n_subsets + 1).astype(int)
        for s in range(n_subsets):
            sub = shots.subset(np.sort(perm[bounds[s]:bounds[s + 1]]))
            try:
                models = build_models(sub, params, rank_window, allow_early)
                assignment = sort_shots(sub, models, params.roi,
                                        params.model_floor)
                bands = class_average(sub, assignment, k)
            except DegenerateClassError:
                n_skipped += 1
                continue
            curves = [b.mean for b in bands]
            match = _match_to_reference(curves, full_models, params.roi,
                                        params.model_floor)
            matched = np.empty((k, shots.axis.n_samples))
            for j in range(k):
                matched[match[j]] = curves[j].values
            runs.append(matched)
    if runs:
        stack = np.stack(runs)
        class_mean = stack.mean(axis=0)
        class_std = stack.std(axis=0)
    else:
        class_mean = np.stack([b.mean.values for b in full_curves])
        class_std = np.zeros((k, shots.axis.n_samples))
    return StabilityResult(full_models=full_models,
                           full_assignment=full_assignment,
                           full_curves=full_curves, class_mean=class_mean,
                           class_std=class_std,
                           n_runs=len(runs), n_skipped=n_skipped)


def band_agreement(curve_a: Trace, sigma_a: np.ndarray, curve_b: Trace,
                   sigma_b: np.ndarray, window: Roi, n_sigma: float = 3.0,
                   scale: bool = True) -> float:
    """Fraction of window bins where two curves agree within combined bands.

    With scale, an overall factor is fitted (curve_b onto curve_a) first;
    its sigma scales along. Agreement per bin means
    |a - alpha*b| <= n_sigma * sqrt(sigma_a^2 + (alpha*sigma_b)^2).
    """
    lo, hi = curve_a.axis.roi_bins(window)
    alpha = fit_scale(curve_b, curve_a, window) if scale else 1.0
    diff = np.abs(curve_a.values[lo:hi] - alpha * curve_b.values[lo:hi])
    combined = np.sqrt(sigma_a[lo:hi] ** 2 + (alpha * sigma_b[lo:hi]) ** 2)
    ok = diff <= n_sigma * np.maximum(combined, 1e-300)
    return float(ok.mean())


def combined_sigma(band: UncertaintyBand, stability_std: np.ndarray) -> np.ndarray:
    """Quadrature sum of the Poisson band and the resampling spread."""
    return np.sqrt(band.sigma ** 2 + stability_std ** 2)


@dataclass(frozen=True)
class ConsistencyReport:
    forced_k: int
    pair_fractions: dict  # (i, j) -> fraction of bins agreeing
    agreeing_pairs: tuple
    verdict: str  # "agree" (all pairs agree) or "distinct"
    stability: StabilityResult = field(repr=False, default=None)


def consistency_test(shots: ShotSet, params: AnalysisParams, k: int,
                     n_subsets: int = 5, n_reps: int = 10, rng_seed: int = 0,
                     compare_window: Optional[Roi] = None,
                     n_sigma: float = 3.0, agree_fraction: float = 0.95,
                     rank_window: Optional[Roi] = None,
                     allow_early: bool = False) -> ConsistencyReport:
    """Force a k-cluster analysis and report which recovered classes agree.

    Pairwise agreement uses the combined Poisson + stability bands within
    the comparison window (default 3-100 ns, clipped to the axis). On a
    single-class set with forced k=2 the expected verdict is "agree"; with
    one extra cluster on a two-class set exactly one pair should agree.
    """
    forced = replace(params, k=k, n_hs=max(params.n_hs, k))
    stab = stability_analysis(shots, forced, n_subsets, n_reps, rng_seed,
                              rank_window, allow_early)
    if compare_window is None:
        compare_window = Roi(max(3.0, shots.axis.t0_ns),
                             min(100.0, shots.axis.t_end_ns))
    sigmas = [combined_sigma(stab.full_curves[c], stab.class_std[c])
              for c in range(k)]
    pair_fractions = {}
    agreeing = []
    for i in range(k):
        for j in range(i + 1, k):
            frac = band_agreement(stab.full_curves[i].mean, sigmas[i],
                                  stab.full_curves[j].mean, sigmas[j],
                                  compare_window, n_sigma)
            pair_fractions[(i, j)] = frac
            if frac >= agree_fraction:
                agreeing.append((i, j))
    verdict = "agree" if len(agreeing) == len(pair_fractions) else "distinct"
    return ConsistencyReport(forced_k=k, pair_fractions=pair_fractions,
                             agreeing_pairs=tuple(agreeing), verdict=verdict,
                             stability=stab)


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    permutation: tuple
    confusion: np.ndarray = field(repr=False)
    binned_accuracy: tuple = ()  # ((bin_low, bin_high, accuracy, count), ...)


def evaluate_against_labels(shots: ShotSet, assignment: np.ndarray,
                            photon_estimates: Optional[np.ndarray] = None,
                            n_bins: int = 5) -> EvaluationReport:
    """Best-permutation accuracy of an assignment against ground-truth labels.

    Evaluation-only: this is the single code path allowed to read labels.
    With photon_estimates, accuracy is additionally binned by estimated
    photon number (quantile bins).
    """
    if shots.labels is None:
        raise InvalidParameterError("set carries no ground-truth labels")
    assignment = np.asarray(assignment)
    labels = shots.labels.astype(np.intp)
    n_true = int(labels.max()) + 1
    n_pred = int(assignment.max()) + 1
    confusion = np.zeros((n_true, n_pred), dtype=np.int64)
    np.add.at(confusion, (labels, assignment), 1)
    k = max(n_true, n_pred)
    best_perm = None
    best_hits = -1
    for perm in itertools.permutations(range(k), n_pred):
        hits = sum(confusion[perm[j], j] for j in range(n_pred)
                   if perm[j] < n_true)
        if hits > best_hits:
            best_hits = hits
            best_perm = perm
    accuracy = best_hits / labels.size
    mapped = np.array([best_perm[int(c)] for c in range(n_pred)])
    correct = mapped[assignment] == labels
    binned = []
    if photon_estimates is not None:
        est = np.asarray(photon_estimates, dtype=np.float64)
        edges = np.quantile(est, np.linspace(0, 1, n_bins + 1))
        for b in range(n_bins):
            hi_edge = edges[b + 1] if b < n_bins - 1 else np.inf
            in_bin = (est >= edges[b]) & (est < hi_edge)
            if in_bin.sum() == 0:
                continue
            binned.append((float(edges[b]), float(edges[b + 1]),
                           float(correct[in_bin].mean()), int(in_bin.sum())))
    return EvaluationReport(accuracy=float(accuracy),
                            permutation=tuple(best_perm),
                            confusion=confusion, binned_accuracy=tuple(binned))
