"""End-to-end acceptance checks for the full analysis pipeline.

Each test prints one PASS/FAIL line on the terminal (bypassing capture) so a
full run yields a nine-line scoreboard. The heavyweight fixtures (default
benchmark set, optimized parameters, stability run) are shared across tests;
their wall times are accumulated and checked against the end-to-end budget.
"""

import math
import time

import numpy as np
import pytest

from reference import complete_linkage_reference, nll_factorial
from shotsort.cluster import (
    Partition,
    cluster_model,
    merge_sequence,
    score_from_distances,
    select_num_clusters,
    silhouette,
)
from shotsort.content import (
    calibrate_photon_number,
    estimate_photons,
    rank_shots,
)
from shotsort.dataset import ShotSet, read_bundle, write_bundle
from shotsort.distance import (
    DistanceMatrix,
    Roi,
    distance_matrix,
    poisson_nll,
    sym_distance,
)
from shotsort.errors import BundleFormatError, CalibrationRangeError
from shotsort.pipeline import (
    AnalysisParams,
    band_agreement,
    build_models,
    class_average,
    combined_sigma,
    consistency_test,
    evaluate_against_labels,
    optimize_parameters,
    sort_shots,
    stability_analysis,
)
from shotsort.simulate import (
    default_scenario,
    generate_experiment,
    intensity,
    sample_arrivals,
    stamp_photons,
    true_photon_counts,
)
from shotsort.traces import TimeAxis, Trace, detector_kernel

TIMINGS = {}


def _timed(key, fn):
    t0 = time.perf_counter()
    out = fn()
    TIMINGS[key] = time.perf_counter() - t0
    return out


def _scoreboard(capsys, name, fn):
    try:
        detail = fn()
    except Exception:
        with capsys.disabled():
            print(f"{name}: FAIL")
        raise
    with capsys.disabled():
        print(f"{name}: PASS ({detail})")


@pytest.fixture(scope="module")
def default_cfg():
    return default_scenario(n_shots=20000, rng_seed=0)


@pytest.fixture(scope="module")
def default_set(default_cfg):
    return _timed("generate", lambda: generate_experiment(default_cfg))


@pytest.fixture(scope="module")
def optimized(default_set):
    return _timed("optimize", lambda: optimize_parameters(default_set))


@pytest.fixture(scope="module")
def sorted_run(default_set, optimized):
    params, _ = optimized

    def run():
        models = build_models(default_set, params)
        assignment = sort_shots(default_set, models, params.roi,
                                params.model_floor)
        return models, assignment

    return _timed("sort", run)


@pytest.fixture(scope="module")
def stability(default_set, optimized):
    params, _ = optimized
    return _timed("stability", lambda: stability_analysis(
        default_set, params, n_subsets=5, n_reps=10, rng_seed=0))


def test_distance_oracle(capsys):
    def check():
        rng = np.random.default_rng(100)
        pairs = []
        for _ in range(1000):
            n = int(rng.integers(2, 33))
            axis = TimeAxis(0.0, 1.0, n)
            a = rng.integers(0, 16, n)
            b = rng.integers(0, 16, n)
            pairs.append((axis, a, b,
                          Trace(axis=axis, values=a.astype(float)),
                          Trace(axis=axis, values=b.astype(float))))
        t0 = time.perf_counter()
        results = []
        for axis, a, b, ta, tb in pairs:
            roi = Roi(0.0, float(axis.n_samples))
            results.append((poisson_nll(ta, tb, roi),
                            sym_distance(ta, tb, roi),
                            sym_distance(tb, ta, roi)))
        elapsed = time.perf_counter() - t0
        worst = 0.0
        for (axis, a, b, _, _), (nll, d_ab, d_ba) in zip(pairs, results):
            want = nll_factorial(a, b.astype(float), 1e-3)
            rel = abs(nll - want) / max(abs(want), 1e-300)
            worst = max(worst, rel)
            assert rel <= 1e-12
            assert d_ab == d_ba
        assert elapsed < 1.0
        return f"1000 pairs, worst rel err {worst:.2e}, {elapsed:.2f} s"

    _scoreboard(capsys, "acceptance 1/9 distance oracle", check)


def test_clustering_oracle(capsys):
    def check():
        rng = np.random.default_rng(200)
        cases = []
        for trial in range(200):
            n = int(rng.integers(2, 9))
            m = rng.random((n, n)) * 10.0
            if trial % 2:
                m = np.floor(m)  # integer distances exercise the tie rule
            m = np.maximum(m, m.T)
            np.fill_diagonal(m, 0.0)
            cases.append(m)
        merge_sequence(DistanceMatrix(values=cases[0]), 1)  # jit warmup
        t0 = time.perf_counter()
        got = [merge_sequence(DistanceMatrix(values=m), 1) for m in cases]
        elapsed = time.perf_counter() - t0
        for m, seq in zip(cases, got):
            _, want = complete_linkage_reference(m, 1)
            assert seq == want
        assert elapsed < 10.0
        return f"200 trials, {elapsed:.2f} s"

    _scoreboard(capsys, "acceptance 2/9 clustering oracle", check)


def test_silhouette_hand_checks(capsys):
    def check():
        assert score_from_distances(1.0, 3.0) == 2.0 / 3.0
        assert score_from_distances(2.0, 2.0) == 0.0
        assert score_from_distances(0.0, 0.0) == 0.0
        # singleton cluster members score exactly 0
        axis = TimeAxis(0.0, 1.0, 4)
        shots = ShotSet(axis=axis, traces=[[5.0, 0.0, 5.0, 0.0],
                                           [5.0, 0.5, 5.0, 0.5],
                                           [0.0, 9.0, 0.0, 9.0]])
        part = Partition(k=2, assignment=np.array([0, 0, 1]))
        rep = silhouette(shots, np.arange(3), part, Roi(0.0, 4.0))
        assert rep.per_member[2] == 0.0
        return "s(1,3)=2/3 exact, equidistant and singleton cases 0"

    _scoreboard(capsys, "acceptance 3/9 silhouette hand-check", check)


def test_end_to_end_recovery(capsys, default_cfg, default_set, optimized,
                             sorted_run, stability):
    def check():
        params, _ = optimized
        models, assignment = sorted_run

        # (a) unsupervised cluster-count selection finds the two classes
        ranking = rank_shots(default_set)
        k_best, _ = select_num_clusters(default_set, ranking.top(params.n_hs),
                                        params.roi, k_max=4,
                                        model_floor=params.model_floor)
        assert k_best == 2

        # (b) the chosen ROI overlaps the analytic maximum-difference window
        t = default_set.axis.times()
        c0 = default_cfg.classes[0][0]
        c1 = default_cfg.classes[1][0]
        diff = np.abs(intensity(c0, t) - intensity(c1, t))
        above = t[diff >= 0.5 * diff.max()]
        assert above.min() < params.roi.t_end_ns
        assert above.max() > params.roi.t_start_ns

        # (c) sorting accuracy against ground truth
        rep = evaluate_against_labels(default_set, assignment)
        counts = true_photon_counts(default_cfg)
        bright = counts >= 50
        perm = np.array(rep.permutation)
        correct = perm[assignment] == default_set.labels
        acc_bright = float(correct[bright].mean())
        assert rep.accuracy >= 0.65
        assert acc_bright >= 0.90

        # (d) recovered class curves track the true class averages within
        # 3 sigma combined bands over 3-100 ns
        truth_bands = class_average(default_set,
                                    default_set.labels.astype(int), 2)
        window = Roi(3.0, 100.0)
        fracs = []
        for c in range(2):
            rec = stability.full_curves[c]
            sigma = combined_sigma(rec, stability.class_std[c])
            truth = truth_bands[int(perm[c])]
            frac = band_agreement(rec.mean, sigma, truth.mean, truth.sigma,
                                  window, n_sigma=3.0, scale=False)
            fracs.append(frac)
            assert frac >= 0.95

        total = sum(TIMINGS.values())
        assert total < 300.0
        return (f"k={k_best}, ROI [{params.roi.t_start_ns:g},"
                f"{params.roi.t_end_ns:g}) ns, acc {rep.accuracy:.3f} "
                f"(bright {acc_bright:.3f}), band fracs "
                f"{[round(f, 3) for f in fracs]}, {total:.0f} s total")

    _scoreboard(capsys, "acceptance 4/9 end-to-end recovery", check)


def test_forced_k_consistency(capsys, default_set, optimized):
    def check():
        params, _ = optimized

        # single-class data, forced k=2: the two recovered curves agree
        single = generate_experiment(
            default_scenario(n_shots=20000, rng_seed=0, phases=(0.0,)))
        rep2 = consistency_test(single, params, k=2)
        assert rep2.verdict == "agree"
        assert all(f >= 0.95 for f in rep2.pair_fractions.values())

        # two-class data, forced k=3: exactly one pair agrees
        rep3 = consistency_test(default_set, params, k=3)
        assert len(rep3.agreeing_pairs) == 1
        return (f"k=2 single-class fractions "
                f"{[round(v, 3) for v in rep2.pair_fractions.values()]}; "
                f"k=3 agreeing pairs {list(rep3.agreeing_pairs)}")

    _scoreboard(capsys, "acceptance 5/9 forced-k consistency", check)


def test_stability_bands(capsys, default_set, optimized, stability):
    def check():
        params, _ = optimized

        # deterministic under a fixed seed
        again = stability_analysis(default_set, params, n_subsets=5,
                                   n_reps=10, rng_seed=0)
        assert np.array_equal(again.class_std, stability.class_std)
        assert np.array_equal(again.class_mean, stability.class_mean)
        assert again.n_runs == stability.n_runs

        # full-run curves inside the resampled std band over 3-100 ns
        lo, hi = default_set.axis.window_bins(3.0, 100.0)
        fracs = []
        for c in range(params.k):
            full = stability.full_curves[c].mean.values[lo:hi]
            mean = stability.class_mean[c, lo:hi]
            std = stability.class_std[c, lo:hi]
            inside = np.abs(full - mean) <= std + 1e-12
            frac = float(inside.mean())
            fracs.append(frac)
            assert frac >= 0.90
        return (f"{stability.n_runs} runs, band fractions "
                f"{[round(f, 3) for f in fracs]}")

    _scoreboard(capsys, "acceptance 6/9 stability bands", check)


def test_photon_calibration(capsys, default_set):
    def check():
        axis = default_set.axis
        avg = cluster_model(default_set, np.arange(default_set.n_shots))
        kernel = detector_kernel(2.5, axis.dt_ns)
        tail = Roi(20.0, axis.t_end_ns)
        full = Roi(3.0, axis.t_end_ns)
        n_values = (1, 2, 5, 10, 20, 50, 100, 200)
        cal = calibrate_photon_number(avg, kernel, n_values, 1000, tail,
                                      full, rng_seed=0)
        means = [e[1] for e in cal.entries]
        assert all(b > a for a, b in zip(means, means[1:]))

        # invert freshly simulated shots of known photon number
        density = np.maximum(avg.values, 0.0)
        rng = np.random.default_rng(777)
        errs = {}
        full_lo, full_hi = axis.roi_bins(full)
        for n in (20, 50, 100, 200):
            estimates = []
            for _ in range(40):
                arrivals = sample_arrivals(density, axis, n, rng)
                tr = stamp_photons(axis, kernel, arrivals)
                content = float(np.log1p(np.maximum(
                    tr[full_lo:full_hi], 0.0)).sum() * axis.dt_ns)
                try:
                    est, _ = estimate_photons(content, cal)
                except CalibrationRangeError as oor:
                    est = float(oor.nearest[0])
                estimates.append(est)
            err = abs(np.mean(estimates) - n) / n
            errs[n] = err
            assert err <= 0.15
        worst = max(errs.values())
        return (f"monotone over N={list(n_values)}, worst inversion error "
                f"{worst:.1%}")

    _scoreboard(capsys, "acceptance 7/9 photon calibration", check)


def test_performance(capsys, default_cfg):
    def check():
        cfg = default_scenario(n_shots=2000, rng_seed=0)
        shots = generate_experiment(cfg)
        roi8 = Roi(4.0, 8.0)  # 8 bins at 0.5 ns
        distance_matrix(shots, np.arange(10), roi8)  # jit warmup

        t0 = time.perf_counter()
        dm = distance_matrix(shots, np.arange(100), roi8)
        optimize_parameters(shots, (10, 15, 20, 30, 50, 75, 100))
        scan_time = time.perf_counter() - t0
        assert dm.n == 100
        assert scan_time < 60.0

        # sorting 100k shots against 2 models
        rng = np.random.default_rng(0)
        t = default_cfg.axis.times()
        rates = [intensity(c, t) * 40.0 for c, _ in default_cfg.classes]
        big = np.empty((100000, len(t)))
        half = 50000
        dt = default_cfg.axis.dt_ns
        big[:half] = rng.poisson(rates[0] * dt, (half, len(t))) / dt
        big[half:] = rng.poisson(rates[1] * dt, (half, len(t))) / dt
        big_set = ShotSet(axis=default_cfg.axis, traces=big)
        models = [Trace(axis=default_cfg.axis, values=r) for r in rates]
        t0 = time.perf_counter()
        assignment = sort_shots(big_set, models, Roi(3.0, 100.0))
        sort_time = time.perf_counter() - t0
        assert assignment.shape == (100000,)
        assert sort_time < 10.0
        return (f"matrix+scan {scan_time:.1f} s < 60 s, "
                f"100k-shot sort {sort_time:.2f} s < 10 s")

    _scoreboard(capsys, "acceptance 8/9 performance", check)


def test_bundle_io(capsys, tmp_path):
    def check():
        rng = np.random.default_rng(42)
        for i in range(500):
            n_shots = int(rng.integers(1, 9))
            n_samples = int(rng.integers(2, 40))
            axis = TimeAxis(t0_ns=float(rng.uniform(-5, 5)),
                            dt_ns=float(rng.uniform(0.1, 2.0)),
                            n_samples=n_samples)
            traces = rng.random((n_shots, n_samples)) * 10.0
            labels = (rng.integers(0, 3, n_shots)
                      if rng.random() < 0.5 else None)
            shots = ShotSet(axis=axis, traces=traces, labels=labels,
                            meta={"case": str(i)})
            path = tmp_path / "roundtrip.bundle"
            write_bundle(shots, path)
            back = read_bundle(path)
            assert np.array_equal(
                back.traces, traces.astype(np.float32).astype(np.float64))
            if labels is None:
                assert back.labels is None
            else:
                assert np.array_equal(back.labels, labels)
            assert back.axis == axis
            assert back.meta["case"] == str(i)

        # corrupted headers raise the dedicated format error
        good = tmp_path / "good.bundle"
        write_bundle(ShotSet(axis=TimeAxis(0.0, 0.5, 4),
                             traces=np.ones((2, 4))), good)
        raw = good.read_bytes()
        bad = tmp_path / "bad.bundle"
        bad.write_bytes(raw.replace(b"SHOTSORT1", b"XHOTSORT1", 1))
        with pytest.raises(BundleFormatError):
            read_bundle(bad)
        bad.write_bytes(raw[:-2])
        with pytest.raises(BundleFormatError):
            read_bundle(bad)
        bad.write_bytes(b"\x00garbage\n" + raw)
        with pytest.raises(BundleFormatError):
            read_bundle(bad)
        return "500 roundtrips lossless, corrupted headers rejected"

    _scoreboard(capsys, "acceptance 9/9 bundle io", check)
