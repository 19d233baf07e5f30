"""Command-line front end.

Subcommands: simulate | rank | optimize | sort | analyze | stability |
consistency | calibrate | pipeline | evaluate. Analysis commands never read
ground-truth labels; `evaluate` is the single explicitly named path that
does. Every command writes a versioned JSON report (plus CSV curves) into
the output directory and prints a one-line summary per stage.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, cluster, content, pipeline, simulate
from .dataset import export_curves, read_bundle, write_bundle
from .distance import DEFAULT_MODEL_FLOOR, Roi, distance_matrix
from .errors import ShotSortError
from .pipeline import AnalysisParams

SCHEMA_VERSION = 1


def _report(out_dir: Path, command: str, payload: dict, name="report.json") -> Path:
    doc = {"schema_version": SCHEMA_VERSION, "tool": f"shotsort {__version__}",
           "command": command, **payload,
           "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _load_set(path: str):
    p = Path(path)
    if not p.exists():
        raise ShotSortError(f"input bundle not found: {p}")
    return read_bundle(p)


def _params_from_args(args, shots) -> AnalysisParams:
    if getattr(args, "params", None):
        with open(args.params) as f:
            doc = json.load(f)
        chosen = doc.get("chosen_params", doc)
        return AnalysisParams(
            n_hs=int(chosen["n_hs"]),
            roi=Roi(float(chosen["roi_start_ns"]), float(chosen["roi_end_ns"])),
            k=int(chosen["k"]),
            model_floor=float(chosen.get("model_floor", DEFAULT_MODEL_FLOOR)),
        )
    if args.roi_start_ns is None or args.roi_end_ns is None:
        raise ShotSortError(
            "need either --params <report.json> or --roi-start-ns/--roi-end-ns"
        )
    return AnalysisParams(
        n_hs=int(args.n_hs_single), roi=Roi(args.roi_start_ns, args.roi_end_ns),
        k=args.k, model_floor=args.model_floor)


def _params_dict(params: AnalysisParams) -> dict:
    return {"n_hs": params.n_hs, "roi_start_ns": params.roi.t_start_ns,
            "roi_end_ns": params.roi.t_end_ns, "k": params.k,
            "model_floor": params.model_floor}


def _write_quality_maps(maps, out_dir: Path):
    for n_hs, qm in maps.items():
        path = out_dir / f"quality_map_nhs{n_hs}.csv"
        with open(path, "w", newline="\n") as f:
            f.write("start_ns,end_ns,S\n")
            for i, s in enumerate(qm.start_ns):
                for j, e in enumerate(qm.end_ns):
                    v = qm.grid[i, j]
                    if not np.isnan(v):
                        f.write(f"{s:.9g},{e:.9g},{v:.9g}\n")


def cmd_simulate(args) -> int:
    if args.config:
        cfg = simulate.load_config(args.config)
    else:
        cfg = simulate.default_scenario()
    if args.n_shots is not None:
        cfg = simulate.config_from_dict(
            {**simulate.config_to_dict(cfg), "n_shots": args.n_shots})
    if args.seed is not None:
        cfg = simulate.config_from_dict(
            {**simulate.config_to_dict(cfg), "rng_seed": args.seed})
    shots = simulate.generate_experiment(cfg)
    write_bundle(shots, args.out)
    print(f"simulate: wrote {shots.n_shots} labeled shots "
          f"({shots.axis.n_samples} bins) to {args.out}")
    return 0


def cmd_rank(args) -> int:
    shots = _load_set(args.input)
    ranking = content.rank_shots(shots, allow_early=args.allow_early)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "content.csv", "w", newline="\n") as f:
        f.write("shot,content,rank\n")
        rank_of = np.empty(shots.n_shots, dtype=int)
        rank_of[ranking.order] = np.arange(shots.n_shots)
        for i, (c, r) in enumerate(zip(ranking.content, rank_of)):
            f.write(f"{i},{c:.9g},{r}\n")
    _report(out, "rank", {
        "n_shots": shots.n_shots,
        "window_ns": [ranking.window.t_start_ns, ranking.window.t_end_ns],
        "content_max": float(ranking.content.max()),
        "content_mean": float(ranking.content.mean()),
        "top_shots": [int(i) for i in ranking.top(20)],
    })
    print(f"rank: {shots.n_shots} shots, top content "
          f"{ranking.content.max():.4g}")
    return 0


def cmd_optimize(args) -> int:
    shots = _load_set(args.input)
    candidates = [int(x) for x in args.n_hs.split(",")] if args.n_hs \
        else list(pipeline.DEFAULT_N_HS_CANDIDATES)
    params, maps = pipeline.optimize_parameters(
        shots, candidates, k=args.k, roi_step_ns=args.roi_step_ns,
        roi_min_start_ns=args.roi_min_start_ns, sigma_ns=args.sigma_ns,
        model_floor=args.model_floor, allow_early=args.allow_early)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_quality_maps(maps, out)
    quality = {str(n): float(qm.best_cell()[0]) for n, qm in maps.items()}
    _report(out, "optimize", {
        "chosen_params": _params_dict(params),
        "best_quality_per_n_hs": quality,
        "n_hs_candidates": candidates,
    })
    print(f"optimize: best S={maps[params.n_hs].best_cell()[0]:.4g} at "
          f"n_hs={params.n_hs}, ROI [{params.roi.t_start_ns:g}, "
          f"{params.roi.t_end_ns:g}) ns")
    return 0


def _sort_and_average(shots, params, allow_early):
    models = pipeline.build_models(shots, params, allow_early=allow_early)
    assignment = pipeline.sort_shots(shots, models, params.roi,
                                     params.model_floor)
    bands = pipeline.class_average(shots, assignment, params.k)
    return models, assignment, bands


def cmd_sort(args) -> int:
    shots = _load_set(args.input)
    params = _params_from_args(args, shots)
    models, assignment, _ = _sort_and_average(shots, params, args.allow_early)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "assignment.csv", "w", newline="\n") as f:
        f.write("shot,class\n")
        for i, c in enumerate(assignment):
            f.write(f"{i},{int(c)}\n")
    counts = np.bincount(assignment, minlength=params.k)
    export_curves([(f"model_{c}", m) for c, m in enumerate(models)],
                  out / "models.csv")
    _report(out, "sort", {
        "chosen_params": _params_dict(params),
        "class_counts": [int(c) for c in counts],
    })
    print(f"sort: {shots.n_shots} shots into {params.k} classes, counts "
          f"{counts.tolist()}")
    return 0


def cmd_analyze(args) -> int:
    shots = _load_set(args.input)
    params = _params_from_args(args, shots)
    models, assignment, bands = _sort_and_average(shots, params,
                                                  args.allow_early)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_curves([(f"class_{c}", band) for c, band in enumerate(bands)],
                  out / "class_curves.csv")
    fit_window = Roi(shots.axis.t0_ns, min(100.0, shots.axis.t_end_ns))
    scales = [pipeline.fit_scale(bands[0].mean, bands[c].mean, fit_window)
              for c in range(params.k)]
    counts = np.bincount(assignment, minlength=params.k)
    _report(out, "analyze", {
        "chosen_params": _params_dict(params),
        "class_counts": [int(c) for c in counts],
        "scale_factors_vs_class0": [float(s) for s in scales],
        "curve_files": ["class_curves.csv"],
    })
    print(f"analyze: class counts {counts.tolist()}, scale factors "
          f"{[round(s, 4) for s in scales]}")
    return 0


def cmd_stability(args) -> int:
    shots = _load_set(args.input)
    params = _params_from_args(args, shots)
    stab = pipeline.stability_analysis(shots, params, n_subsets=args.subsets,
                                       n_reps=args.reps, rng_seed=args.seed,
                                       allow_early=args.allow_early)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curves = []
    for c, band in enumerate(stab.full_curves):
        curves.append((f"class_{c}", band))
    export_curves(curves, out / "class_curves.csv")
    with open(out / "stability_std.csv", "w", newline="\n") as f:
        f.write("time_ns," + ",".join(
            f"class_{c}_std" for c in range(params.k)) + "\n")
        for i, t in enumerate(shots.axis.times()):
            row = ",".join(f"{stab.class_std[c, i]:.9g}"
                           for c in range(params.k))
            f.write(f"{t:.9g},{row}\n")
    _report(out, "stability", {
        "chosen_params": _params_dict(params),
        "n_subsets": args.subsets, "n_reps": args.reps, "seed": args.seed,
        "n_runs": stab.n_runs, "n_skipped": stab.n_skipped,
        "mean_std": [float(stab.class_std[c].mean())
                     for c in range(params.k)],
    })
    print(f"stability: {stab.n_runs} reconstructions "
          f"({stab.n_skipped} skipped)")
    return 0


def cmd_consistency(args) -> int:
    shots = _load_set(args.input)
    params = _params_from_args(args, shots)
    reports = {}
    for k in (2, 3):
        rep = pipeline.consistency_test(
            shots, params, k=k, n_subsets=args.subsets, n_reps=args.reps,
            rng_seed=args.seed, allow_early=args.allow_early)
        reports[k] = rep
        print(f"consistency k={k}: verdict {rep.verdict}, agreeing pairs "
              f"{list(rep.agreeing_pairs)}")
    out = Path(args.out)
    _report(out, "consistency", {
        "chosen_params": _params_dict(params),
        "forced_k2": {
            "verdict": reports[2].verdict,
            "pair_fractions": {f"{i}-{j}": v for (i, j), v in
                               reports[2].pair_fractions.items()},
        },
        "forced_k3": {
            "verdict": reports[3].verdict,
            "agreeing_pairs": [f"{i}-{j}" for i, j in
                               reports[3].agreeing_pairs],
            "pair_fractions": {f"{i}-{j}": v for (i, j), v in
                               reports[3].pair_fractions.items()},
        },
    })
    return 0


def cmd_calibrate(args) -> int:
    shots = _load_set(args.input)
    avg = cluster.cluster_model(shots, np.arange(shots.n_shots))
    from .traces import detector_kernel
    kernel = detector_kernel(args.kernel_fwhm_ns, shots.axis.dt_ns, 1.0)
    n_values = [int(x) for x in args.photon_numbers.split(",")]
    tail = Roi(min(args.tail_start_ns, shots.axis.t_end_ns - shots.axis.dt_ns),
               shots.axis.t_end_ns)
    full = Roi(max(3.0, shots.axis.t0_ns), shots.axis.t_end_ns)
    cal = content.calibrate_photon_number(avg, kernel, n_values, args.n_sims,
                                          tail, full, rng_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    content.export_calibration_csv(cal, out / "calibration.csv")
    _report(out, "calibrate", {
        "photon_numbers": n_values, "n_sims": args.n_sims,
        "tail_start_ns": tail.t_start_ns,
        "entries": [{"N": n, "content_mean": m, "content_std": s}
                    for n, m, s in cal.entries],
    })
    print(f"calibrate: {len(cal.entries)} entries, content range "
          f"[{cal.entries[0][1]:.4g}, {cal.entries[-1][1]:.4g}]")
    return 0


def cmd_evaluate(args) -> int:
    shots = _load_set(args.input)
    params = _params_from_args(args, shots)
    _, assignment, _ = _sort_and_average(shots, params, args.allow_early)
    rep = pipeline.evaluate_against_labels(shots, assignment)
    out = Path(args.out)
    _report(out, "evaluate", {
        "chosen_params": _params_dict(params),
        "accuracy": rep.accuracy,
        "permutation": list(rep.permutation),
        "confusion": rep.confusion.tolist(),
    })
    print(f"evaluate: best-permutation accuracy {rep.accuracy:.4f}")
    return 0


def cmd_pipeline(args) -> int:
    shots = _load_set(args.input)
    candidates = [int(x) for x in args.n_hs.split(",")] if args.n_hs \
        else list(pipeline.DEFAULT_N_HS_CANDIDATES)
    ranking = content.rank_shots(shots, allow_early=args.allow_early)
    print(f"rank: {shots.n_shots} shots, top content "
          f"{ranking.content.max():.4g}")
    params, maps = pipeline.optimize_parameters(
        shots, candidates, k=args.k, roi_step_ns=args.roi_step_ns,
        roi_min_start_ns=args.roi_min_start_ns, sigma_ns=args.sigma_ns,
        model_floor=args.model_floor, allow_early=args.allow_early)
    print(f"optimize: n_hs={params.n_hs}, ROI [{params.roi.t_start_ns:g}, "
          f"{params.roi.t_end_ns:g}) ns, "
          f"S={maps[params.n_hs].best_cell()[0]:.4g}")
    models, assignment, bands = _sort_and_average(shots, params,
                                                  args.allow_early)
    counts = np.bincount(assignment, minlength=params.k)
    print(f"sort: class counts {counts.tolist()}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_quality_maps(maps, out)
    export_curves([(f"class_{c}", band) for c, band in enumerate(bands)],
                  out / "class_curves.csv")
    fit_window = Roi(shots.axis.t0_ns, min(100.0, shots.axis.t_end_ns))
    scales = [pipeline.fit_scale(bands[0].mean, bands[c].mean, fit_window)
              for c in range(params.k)]
    print(f"analyze: scale factors {[round(s, 4) for s in scales]}")
    _report(out, "pipeline", {
        "chosen_params": _params_dict(params),
        "best_quality_per_n_hs": {str(n): float(qm.best_cell()[0])
                                  for n, qm in maps.items()},
        "class_counts": [int(c) for c in counts],
        "scale_factors_vs_class0": [float(s) for s in scales],
        "curve_files": ["class_curves.csv"],
    })
    return 0


def _add_common_analysis_flags(p):
    p.add_argument("--input", required=True, help="input bundle path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model-floor", type=float, default=DEFAULT_MODEL_FLOOR)
    p.add_argument("--allow-early", action="store_true",
                   help="permit ranking windows before 3 ns (simulations)")
    p.add_argument("--threads", type=int, default=0,
                   help="worker thread cap, 0 = auto")


def _add_params_flags(p):
    p.add_argument("--params", help="report.json with chosen_params")
    p.add_argument("--n-hs-single", type=int, default=20,
                   help="n_hs when not using --params")
    p.add_argument("--roi-start-ns", type=float)
    p.add_argument("--roi-end-ns", type=float)
    p.add_argument("--k", type=int, default=2)


def _add_optimize_flags(p):
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--n-hs", help="comma list of n_hs candidates")
    p.add_argument("--roi-step-ns", type=float, default=1.0)
    p.add_argument("--roi-min-start-ns", type=float, default=3.0)
    p.add_argument("--sigma-ns", type=float, default=1.0,
                   help="quality-map smoothing width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shotsort",
        description="Sort time-domain detector traces into dynamics classes.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a labeled synthetic bundle")
    p.add_argument("--config", help="SimConfig JSON (default: desk-scale A/B)")
    p.add_argument("--out", required=True, help="output bundle path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-shots", type=int, default=None)
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rank", help="rank shots by signal content")
    _add_common_analysis_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("optimize", help="scan (n_hs, ROI) for best quality S")
    _add_common_analysis_flags(p)
    _add_optimize_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sort", help="sort all shots against class models")
    _add_common_analysis_flags(p)
    _add_params_flags(p)
    p.set_defaults(func=cmd_sort)

    p = sub.add_parser("analyze", help="class averages and scale comparison")
    _add_common_analysis_flags(p)
    _add_params_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("stability", help="subset resampling stability bands")
    _add_common_analysis_flags(p)
    _add_params_flags(p)
    p.add_argument("--subsets", type=int, default=5)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("consistency",
                       help="forced k=2 and k=3 consistency checks")
    _add_common_analysis_flags(p)
    _add_params_flags(p)
    p.add_argument("--subsets", type=int, default=5)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("calibrate",
                       help="Monte Carlo photon-number calibration")
    _add_common_analysis_flags(p)
    p.add_argument("--photon-numbers", default="1,2,5,10,20,50,100,200")
    p.add_argument("--n-sims", type=int, default=1000)
    p.add_argument("--tail-start-ns", type=float, default=20.0)
    p.add_argument("--kernel-fwhm-ns", type=float, default=2.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate",
                       help="unblind labels and score an analysis (benchmark)")
    _add_common_analysis_flags(p)
    _add_params_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="rank + optimize + sort + analyze")
    _add_common_analysis_flags(p)
    _add_optimize_flags(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 0):
        import numba

        numba.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (ShotSortError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
