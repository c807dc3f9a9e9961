"""Command-line interface: `diqkd-rates <command> ...`.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver failure.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import correlations, estimation, keyrate, preprocess, spdc_model, utils
from .exceptions import ALL_PIPELINE_EXCEPTIONS, ConfigError, IngestionError, exit_code
from .sdp import bff_entropy, npa_relax

DEFAULT_M = 8
DEFAULT_LEVEL = "2+ABZ+AZZ"


def _read_config(filepath):
    try:
        return utils.read_json(filepath)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {filepath}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {filepath}: {e}")


def _load_model(args):
    if args.preset is not None:
        return spdc_model.load_preset(args.preset)
    if args.config is None:
        raise ConfigError("Provide a model JSON (--config) or a --preset")
    return spdc_model.spdc_params_from_dict(_read_config(args.config))


def _load_behavior(filepath):
    """Behavior from a Behavior JSON, a ProjectionResult JSON or a `simulate` output."""
    try:
        data = utils.read_json(filepath)
    except FileNotFoundError:
        raise IngestionError(f"Behavior file not found: {filepath}")
    except json.JSONDecodeError as e:
        raise IngestionError(f"Malformed behavior JSON {filepath}: {e}")
    for key in ("projected", "behavior"):
        if isinstance(data, dict) and key in data:
            data = data[key]
            break
    return correlations.behavior_from_dict(data, normalize=True)


def _solver_cfg(args):
    return {"solver": args.solver} if args.solver else None


def _emit(obj, args):
    obj = utils.to_jsonable(obj)
    if args.out is None:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        utils.write_json(obj, args.out)
        if args.verbose:
            print(f"Wrote {args.out}")


def _preprocess_params(args):
    return preprocess.PreprocessParams(p=args.p, p_n=args.pn)


def _optimizer_params(args):
    params = _read_config(args.optimizer) if args.optimizer else {}
    params.setdefault("seed", args.seed)
    params.setdefault("n_jobs", args.jobs)
    if args.free:
        params["free"] = args.free
    return params


# Commands


def cmd_simulate(args):
    params = _load_model(args)
    behavior = spdc_model.behavior_from_model(params)
    _emit(
        {
            "behavior": correlations.behavior_to_dict(behavior),
            "no_signaling_residual": correlations.no_signaling_residual(behavior),
            "chsh_score": correlations.chsh_score(behavior),
            "truncation_deficit": spdc_model.truncation_deficit(params.u, params.max_pairs),
            "spdc": spdc_model.spdc_params_to_dict(params),
        },
        args,
    )


def cmd_ingest(args):
    table = correlations.read_count_table(args.counts)
    counts, rounds = correlations.counts_from_table(table, args.fiber)
    behavior = correlations.from_counts(counts, rounds)
    _emit(
        {
            "behavior": correlations.behavior_to_dict(behavior),
            "no_signaling_residual": correlations.no_signaling_residual(behavior),
            "rounds": rounds,
            "total_rounds": int(rounds.sum()),
        },
        args,
    )


def cmd_project(args):
    rounds = None
    if str(args.input).endswith(".csv"):
        counts, rounds = correlations.counts_from_table(correlations.read_count_table(args.input), args.fiber)
        raw = correlations.from_counts(counts, rounds)
    else:
        raw = _load_behavior(args.input)
    params = {"level": args.level or "2", "weighted": args.weighted}
    result = estimation.project_to_quantum(
        raw, solver_cfg=_solver_cfg(args), params=params, rounds=rounds, verbose=args.verbose
    )
    _emit(result.to_dict(), args)


def cmd_bound(args):
    behavior = _load_behavior(args.behavior)
    result = bff_entropy.entropy_bound(
        behavior,
        _preprocess_params(args),
        m=args.m,
        level=args.level or DEFAULT_LEVEL,
        solver_cfg=_solver_cfg(args),
        bff_params={"mode": args.mode, "n_jobs": args.jobs},
        verbose=args.verbose,
    )
    if args.certificate:
        utils.write_json(bff_entropy.functional_to_dict(result.dual_functional), args.certificate)
    if args.dump:
        problem = bff_entropy.entropy_problem(
            behavior,
            _preprocess_params(args),
            m=args.m,
            level=args.level or DEFAULT_LEVEL,
        )
        npa_relax.dump_problem(problem, args.dump)
    _emit(result.to_dict(), args)


def cmd_rate(args):
    behavior = _load_behavior(args.behavior)
    model = keyrate.KeyRateModel(
        _preprocess_params(args),
        behavior=behavior,
        project=args.project,
        n_rounds=args.rounds,
        m=args.m,
        level=args.level or DEFAULT_LEVEL,
        f_e=args.fe,
        epsilon=args.eps,
        solver_cfg=_solver_cfg(args),
        verbose=args.verbose,
    )
    report, _ = model.run()
    _emit(report.to_dict(), args)


def cmd_optimize(args):
    template = _load_model(args)
    best, report = keyrate.optimize_params(
        template,
        preprocess_template=_preprocess_params(args),
        f_e=args.fe,
        m=args.m,
        level=args.level or DEFAULT_LEVEL,
        preprocessing=not args.no_preprocessing,
        optimizer_params=_optimizer_params(args),
        solver_cfg=_solver_cfg(args),
        verbose=args.verbose,
    )
    _emit(
        {
            "spdc": spdc_model.spdc_params_to_dict(best["spdc"]),
            "p": best["preprocess"].p,
            "p_n": best["preprocess"].p_n,
            "report": report.to_dict(),
        },
        args,
    )


def _eta_grid(args):
    if args.etas:
        return sorted(args.etas)
    return list(np.round(np.arange(args.eta_min, args.eta_max + 1e-12, args.eta_step), 6))


def cmd_sweep(args):
    template = _load_model(args)
    if args.ideal:
        template = keyrate.ideal_model(template)
    result = keyrate.threshold_sweep(
        template,
        _eta_grid(args),
        f_e=args.fe,
        preprocessing=not args.no_preprocessing,
        preprocess_template=_preprocess_params(args),
        m=args.m,
        level=args.level or DEFAULT_LEVEL,
        sweep_params={"n_jobs": args.jobs},
        optimizer_params=_optimizer_params(args),
        solver_cfg=_solver_cfg(args),
        verbose=args.verbose,
    )
    if args.csv:
        result.to_frame().to_csv(args.csv, index=False)
    if args.plot:
        keyrate.plot_sweep(result, args.plot)
    _emit(result.to_dict(), args)


def cmd_analyze(args):
    table = correlations.read_count_table(args.counts)
    counts, rounds = correlations.counts_from_table(table, args.fiber)
    model = keyrate.KeyRateModel(
        _preprocess_params(args),
        counts=counts,
        rounds=rounds,
        m=args.m,
        level=args.level or DEFAULT_LEVEL,
        f_e=args.fe,
        epsilon=args.eps,
        solver_cfg=_solver_cfg(args),
        dataset=str(args.counts) if args.fiber is None else f"{args.counts}:{args.fiber} m",
        verbose=args.verbose,
    )
    report, output_info = model.run()
    out = report.to_dict()
    out["projection"] = output_info.get("projection")
    _emit(out, args)


def cmd_report(args):
    table = correlations.read_count_table(args.counts) if args.counts else None
    settings = keyrate.read_settings_table(args.settings) if args.settings else None
    summary, reports = keyrate.analyze_fibers(
        table,
        settings,
        n_jobs=args.jobs,
        verbose=args.verbose,
        m=args.m,
        level=args.level or DEFAULT_LEVEL,
        f_e=args.fe,
        epsilon=args.eps,
        solver_cfg=_solver_cfg(args),
    )
    if args.csv:
        summary.to_csv(args.csv, index=False)
    _emit(
        {
            "summary": summary.to_dict(orient="records"),
            "reports": {str(f): (r.to_dict() if r else None) for f, r in reports.items()},
        },
        args,
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "project": cmd_project,
    "bound": cmd_bound,
    "rate": cmd_rate,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def _shared_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--m", type=int, default=DEFAULT_M, help="Quadrature size")
    shared.add_argument("--level", default=None, help="Relaxation level, e.g. '2+ABZ+AZZ'")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--eps", type=float, default=1e-2, help="Confidence error probability")
    shared.add_argument("--fe", type=float, default=1.0, help="Error-correction efficiency")
    shared.add_argument("--jobs", type=int, default=1, help="Concurrent solver workers")
    shared.add_argument("--out", type=Path, default=None, help="Output JSON (default stdout)")
    shared.add_argument("--solver", default=None, help="cvxpy solver name")
    verbosity = shared.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", dest="verbose", action="store_true", default=False)
    verbosity.add_argument("--quiet", dest="verbose", action="store_false")
    return shared


def _add_preprocess_args(parser):
    parser.add_argument("--p", type=float, default=1.0, help="Post-selection keep probability")
    parser.add_argument("--pn", type=float, default=0.0, help="Noisy-preprocessing flip probability")


def _add_model_args(parser):
    parser.add_argument("--config", type=Path, default=None, help="SpdcParams JSON")
    parser.add_argument("--preset", choices=sorted(spdc_model.PRESETS), default=None)


def _add_optimizer_args(parser):
    parser.add_argument("--optimizer", type=Path, default=None, help="OPTIMIZER_PARAMS overrides (JSON)")
    parser.add_argument("--free", nargs="+", default=None, help="Optimized fields")
    parser.add_argument("--no-preprocessing", action="store_true", help="Fix p=1, p_n=0")


def build_parser():
    shared = _shared_parser()
    parser = argparse.ArgumentParser(prog="diqkd-rates", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[shared], help="Behavior of the SPDC model")
    _add_model_args(p)

    p = sub.add_parser("ingest", parents=[shared], help="Count CSV -> raw Behavior JSON")
    p.add_argument("counts", type=Path)
    p.add_argument("--fiber", type=int, default=None)

    p = sub.add_parser("project", parents=[shared], help="Project onto the quantum set")
    p.add_argument("input", type=Path, help="Behavior JSON or count CSV")
    p.add_argument("--fiber", type=int, default=None)
    p.add_argument("--weighted", action="store_true")

    p = sub.add_parser("bound", parents=[shared], help="Entropy bound of a Behavior JSON")
    p.add_argument("behavior", type=Path)
    _add_preprocess_args(p)
    p.add_argument("--mode", choices=sorted(bff_entropy.METHODS), default="joint")
    p.add_argument("--certificate", type=Path, default=None, help="Write the dual Bell functional")
    p.add_argument("--dump", type=Path, default=None, help="Write the relaxation (JSON)")

    p = sub.add_parser("rate", parents=[shared], help="Key rate of a Behavior JSON")
    p.add_argument("behavior", type=Path)
    _add_preprocess_args(p)
    p.add_argument("--project", action="store_true", help="Project before bounding")
    p.add_argument("--rounds", type=int, default=None, help="Total rounds, for delta")

    p = sub.add_parser("optimize", parents=[shared], help="Optimize model and preprocessing")
    _add_model_args(p)
    _add_preprocess_args(p)
    _add_optimizer_args(p)

    p = sub.add_parser("sweep", parents=[shared], help="Efficiency-threshold sweep")
    _add_model_args(p)
    _add_preprocess_args(p)
    _add_optimizer_args(p)
    p.add_argument("--etas", type=float, nargs="+", default=None)
    p.add_argument("--eta-min", type=float, default=0.80)
    p.add_argument("--eta-max", type=float, default=0.95)
    p.add_argument("--eta-step", type=float, default=0.01)
    p.add_argument("--ideal", action="store_true", help="V=1 and no dark counts")
    p.add_argument("--csv", type=Path, default=None, help="(eta, rate) curve")
    p.add_argument("--plot", type=Path, default=None, help="Write the rate-vs-efficiency figure")

    p = sub.add_parser("analyze", parents=[shared], help="Counts -> key-rate report")
    p.add_argument("counts", type=Path)
    p.add_argument("--fiber", type=int, default=None)
    _add_preprocess_args(p)

    p = sub.add_parser("report", parents=[shared], help="Analyze every fiber of a count table")
    p.add_argument("counts", type=Path, nargs="?", default=None, help="Default: packaged data")
    p.add_argument("--settings", type=Path, default=None, help="Per-fiber (p, p_n) CSV")
    p.add_argument("--csv", type=Path, default=None, help="Summary table")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ALL_PIPELINE_EXCEPTIONS as e:
        print(f"diqkd-rates {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return exit_code(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
