"""
Devetak-Winter key rates, parameter optimization and efficiency-threshold sweeps.

    rate = p_V * (H(A|E) - f_e * H(A|B))

with H(A|E) the certified entropy bound and H(A|B) the one-way error
correction cost of the preprocessed key bits.
"""
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np
import pandas as pd
from scipy.optimize import differential_evolution, minimize
from tqdm import tqdm

from . import correlations, estimation, preprocess, spdc_model, utils
from .correlations import DEFAULT_SCENARIO
from .exceptions import ALL_PIPELINE_EXCEPTIONS, ConfigError, SolverFailure
from .sdp import bff_entropy, solver

OPTIMIZER_PARAMS = {
    "free": ["p", "p_n", "r", "u", "angles"],  # Optimized fields. "angles" expands to all 5 angles
    "popsize": 15,  # Population size multiplier (x number of free dimensions)
    "maxiter": 30,  # Generations
    "tol": 1e-6,  # Relative population-energy tolerance
    "seed": 0,
    "polish_maxiter": 100,  # Nelder-Mead iterations after the population search (0: no polish)
    "screen_m": 4,  # Quadrature size of the screening tier
    "screen_level": "2",  # Relaxation level of the screening tier
    "refine_fraction": 0.1,  # Best fraction of one population re-evaluated at the full config
    "failure_penalty": 1.0,  # Objective (-rate) assigned to failed evaluations
    "n_jobs": 1,
}

SWEEP_PARAMS = {
    "bisection_tol": 1e-3,  # (efficiency) width of the final threshold bracket
    "positive_rate": 1e-9,  # (bits/pulse) rates above this count as positive
    "symmetric": True,  # eta_a = eta_b = eta. Otherwise eta scales both template efficiencies
    "n_jobs": 1,  # Parallel grid points
}

BOUNDS = {
    "p": (0.0, 1.0),
    "p_n": (0.0, 0.5),
    "r": (0.0, 1.0),
    "u": (0.001, 1.0),
    "angle": (-np.pi, np.pi),
}
ANGLE_FIELDS = ["a1", "a2", "b1", "b2", "b3"]

# Published per-fiber settings and results
SETTINGS_TABLE = "fiber_settings.csv"
COUNTS_TABLE = "fiber_counts.csv"


@dataclass
class KeyRateReport:
    rate: float  # bits per pulse, negative values kept
    p_v: float
    entropy_bound: bff_entropy.EntropyBoundResult
    ec_cost: float
    f_e: float
    params: dict = field(default_factory=dict)  # preprocessing, model or dataset description
    delta: float = None  # Hoeffding half-width of the Bell estimate
    fingerprint: str = None
    config: dict = field(default_factory=dict)

    @property
    def positive(self):
        return self.rate > 0

    def to_dict(self):
        return {
            "rate": self.rate,
            "positive": self.positive,
            "p_v": self.p_v,
            "ec_cost": self.ec_cost,
            "f_e": self.f_e,
            "entropy_bound": self.entropy_bound.to_dict(),
            "params": self.params,
            "delta": self.delta,
            "fingerprint": self.fingerprint,
            "config": self.config,
        }


@dataclass
class SweepResult:
    etas: list
    rates: list
    best_params: list
    threshold: float = None  # smallest efficiency with a positive optimized rate
    bisection: list = field(default_factory=list)  # (eta, rate) evaluated while bisecting
    f_e: float = 1.0
    preprocessing: bool = True

    def to_frame(self):
        rows = [
            {"eta": eta, "rate": rate, "stage": "grid"} for eta, rate in zip(self.etas, self.rates)
        ]
        rows += [{"eta": eta, "rate": rate, "stage": "bisection"} for eta, rate in self.bisection]
        return pd.DataFrame(rows).sort_values("eta").reset_index(drop=True)

    def to_dict(self):
        """Failed points (rate -inf) are written as null."""
        return {
            "etas": list(self.etas),
            "rates": [_finite_or_none(r) for r in self.rates],
            "best_params": self.best_params,
            "threshold": self.threshold,
            "bisection": [[eta, _finite_or_none(r)] for eta, r in self.bisection],
            "f_e": self.f_e,
            "preprocessing": self.preprocessing,
        }


def _finite_or_none(value):
    return float(value) if np.isfinite(value) else None


def dw_rate(stats, eb, f_e=1.0):
    if f_e < 1:
        raise ConfigError(f"Error-correction efficiency f_e must be >= 1, got {f_e}")
    return stats.p_v * (eb.bound - f_e * stats.ec_cost)


def run_config(m, level, solver_cfg=None, bff_params=None, seed=None):
    """Configuration recorded in reports and hashed into the fingerprint."""
    return {
        "m": m,
        "level": str(level),
        "solver": utils.validate_params(solver_cfg, solver.SOLVER_PARAMS, "solve"),
        "bff": utils.validate_params(bff_params, bff_entropy.BFF_PARAMS, "entropy_bound"),
        "seed": seed,
    }


def rate_from_behavior(
    behavior,
    preprocess_params,
    m=8,
    level="2+ABZ+AZZ",
    f_e=1.0,
    solver_cfg=None,
    bff_params=None,
    scenario=DEFAULT_SCENARIO,
    verbose=False,
):
    """KeyRateReport of a (quantum) behavior at fixed preprocessing."""
    stats = preprocess.process(behavior.key_distribution(scenario), preprocess_params)
    eb = bff_entropy.entropy_bound(
        behavior,
        preprocess_params,
        m=m,
        level=level,
        solver_cfg=solver_cfg,
        bff_params=bff_params,
        scenario=scenario,
        verbose=verbose,
    )
    config = run_config(m, level, solver_cfg, bff_params)
    return KeyRateReport(
        rate=dw_rate(stats, eb, f_e),
        p_v=stats.p_v,
        entropy_bound=eb,
        ec_cost=stats.ec_cost,
        f_e=f_e,
        params={"p": preprocess_params.p, "p_n": preprocess_params.p_n},
        fingerprint=utils.config_fingerprint(config),
        config=config,
    )


def rate_at_fixed_params(behavior, p, p_n, **kwargs):
    return rate_from_behavior(behavior, preprocess.PreprocessParams(p=p, p_n=p_n), **kwargs)


def model_rate(spdc, preprocess_params, **kwargs):
    report = rate_from_behavior(spdc_model.behavior_from_model(spdc), preprocess_params, **kwargs)
    report.params["spdc"] = spdc_model.spdc_params_to_dict(spdc)
    return report


def ideal_model(template):
    """Perfect visibility and no dark counts."""
    return template.replace(V=1.0, p_d=0.0)


# Decision vectors


def _expand_free(free):
    fields = []
    for name in free:
        if name == "angles":
            fields += ANGLE_FIELDS
        elif name in BOUNDS or name in ANGLE_FIELDS:
            fields.append(name)
        else:
            raise ConfigError(f"Unrecognized free field '{name}'. Recognized: {list(BOUNDS)[:4] + ['angles']}")
    return fields


def _bounds(fields):
    return [BOUNDS["angle"] if f in ANGLE_FIELDS else BOUNDS[f] for f in fields]


def _encode(fields, spdc, pp):
    angles = dict(zip(ANGLE_FIELDS, spdc.angles_a + spdc.angles_b))
    values = {"p": pp.p, "p_n": pp.p_n, "r": spdc.r, "u": spdc.u, **angles}
    return np.array([values[f] for f in fields])


def _decode(x, fields, spdc, pp):
    values = dict(zip(fields, np.asarray(x, dtype=float)))
    # Nelder-Mead may step marginally outside the box
    for f, (lo, hi) in zip(fields, _bounds(fields)):
        values[f] = float(np.clip(values[f], lo, hi))
    angles = [values.get(k, a) for k, a in zip(ANGLE_FIELDS, spdc.angles_a + spdc.angles_b)]
    spdc = spdc.replace(
        r=values.get("r", spdc.r),
        u=values.get("u", spdc.u),
        angles_a=tuple(angles[:2]),
        angles_b=tuple(angles[2:]),
    )
    pp = preprocess.PreprocessParams(p=values.get("p", pp.p), p_n=values.get("p_n", pp.p_n))
    return spdc, pp


def _negative_rate(x, fields, spdc, pp, f_e, m, level, solver_cfg, bff_params, penalty):
    """Objective of the population search. Failures return `penalty`."""
    try:
        spdc_x, pp_x = _decode(x, fields, spdc, pp)
        report = model_rate(
            spdc_x, pp_x, m=m, level=level, f_e=f_e, solver_cfg=solver_cfg, bff_params=bff_params
        )
    except ALL_PIPELINE_EXCEPTIONS:
        return penalty
    return -report.rate


def _full_report(x, fields, spdc, pp, f_e, m, level, solver_cfg, bff_params):
    try:
        spdc_x, pp_x = _decode(x, fields, spdc, pp)
        return model_rate(
            spdc_x, pp_x, m=m, level=level, f_e=f_e, solver_cfg=solver_cfg, bff_params=bff_params
        )
    except ALL_PIPELINE_EXCEPTIONS as e:
        print(f"Caught the following exception while refining x={np.round(x, 4).tolist()}")
        print(e)
        return None


def _map(func, items, n_jobs, verbose=False):
    items = list(items)
    if n_jobs == 1:
        return [func(item) for item in tqdm(items, disable=not verbose)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs, backend="multiprocessing")(delayed(func)(item) for item in items)


class _EvaluationLog(object):
    """Map-like `workers` for differential_evolution recording every evaluation."""

    def __init__(self, n_jobs=1):
        self.n_jobs = n_jobs
        self.records = []

    def __call__(self, func, iterable):
        xs = [np.array(x) for x in iterable]
        values = _map(func, xs, self.n_jobs)
        self.records += list(zip(xs, values))
        return values

    def best(self, k):
        ranked = sorted(self.records, key=lambda r: r[1])
        out = []
        for x, _ in ranked:
            if not any(np.allclose(x, other) for other in out):
                out.append(x)
            if len(out) == k:
                break
        return out


def optimize_params(
    template,
    preprocess_template=None,
    f_e=1.0,
    m=8,
    level="2+ABZ+AZZ",
    preprocessing=True,
    optimizer_params=None,
    solver_cfg=None,
    bff_params=None,
    verbose=False,
):
    """Maximize the key rate over the free fields of `template`.

    Screens with a seeded differential-evolution search at
    (screen_m, screen_level), polishes the best point with Nelder-Mead, then
    re-evaluates the best screened points and the template itself at
    (m, level).

    Args:
        template (SpdcParams): fixed fields (efficiencies, dark counts, V)
            and starting values.

    Kwargs:
        preprocess_template (PreprocessParams): starting (p, p_n).
        preprocessing (bool): If False, p = 1 and p_n = 0 stay fixed.

    Returns:
        (best, report): best = {"spdc": SpdcParams, "preprocess": PreprocessParams}
    """
    cfg = utils.validate_params(optimizer_params, OPTIMIZER_PARAMS, "optimize_params", verbose=verbose)
    pp = preprocess_template or preprocess.PreprocessParams()
    free = list(cfg["free"])
    if not preprocessing:
        pp = preprocess.PreprocessParams(p=1.0, p_n=0.0)
        free = [f for f in free if f not in ("p", "p_n")]
    fields = _expand_free(free)
    x0 = _encode(fields, template, pp)
    shared = dict(fields=fields, spdc=template, pp=pp, f_e=f_e, solver_cfg=solver_cfg, bff_params=bff_params)

    candidates = [x0]
    if fields:
        screen = partial(
            _negative_rate,
            m=cfg["screen_m"],
            level=cfg["screen_level"],
            penalty=cfg["failure_penalty"],
            **shared,
        )
        log = _EvaluationLog(cfg["n_jobs"])
        if verbose:
            print(f"Screen {len(fields)} free fields at m={cfg['screen_m']}, level={cfg['screen_level']}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = differential_evolution(
                screen,
                _bounds(fields),
                popsize=cfg["popsize"],
                maxiter=cfg["maxiter"],
                tol=cfg["tol"],
                seed=cfg["seed"],
                x0=np.clip(x0, *np.array(_bounds(fields)).T),
                polish=False,
                updating="deferred",
                workers=log,
            )
        candidates.append(result.x)
        if cfg["polish_maxiter"]:
            polished = minimize(
                screen,
                result.x,
                method="Nelder-Mead",
                bounds=_bounds(fields),
                options={"maxiter": cfg["polish_maxiter"]},
            )
            candidates.append(polished.x)
        n_refine = max(1, int(np.ceil(cfg["refine_fraction"] * cfg["popsize"] * len(fields))))
        candidates += log.best(n_refine)

    if verbose:
        print(f"Refine {len(candidates)} candidates at m={m}, level={level}")
    refine = partial(_full_report, m=m, level=level, **shared)
    reports = _map(refine, candidates, cfg["n_jobs"], verbose=verbose)
    scored = [(r.rate, i) for i, r in enumerate(reports) if r is not None]
    if not scored:
        raise SolverFailure("Every refinement candidate failed")
    _, i_best = max(scored)
    best_spdc, best_pp = _decode(candidates[i_best], fields, template, pp)
    report = reports[i_best]
    report.config["seed"] = cfg["seed"]
    report.config["optimizer"] = cfg
    report.fingerprint = utils.config_fingerprint(report.config)
    if verbose:
        print(f"Best rate: {report.rate:.4e} bits/pulse")
    return {"spdc": best_spdc, "preprocess": best_pp}, report


def optimize_preprocessing(behavior, f_e=1.0, m=8, level="2+ABZ+AZZ", optimizer_params=None, **kwargs):
    """Best (p, p_n) for a fixed behavior: population search then refinement."""
    cfg = utils.validate_params(optimizer_params, OPTIMIZER_PARAMS, "optimize_preprocessing")
    fields = ["p", "p_n"]

    def screen(x):
        try:
            return -rate_at_fixed_params(
                behavior, x[0], x[1], m=cfg["screen_m"], level=cfg["screen_level"], f_e=f_e, **kwargs
            ).rate
        except ALL_PIPELINE_EXCEPTIONS:
            return cfg["failure_penalty"]

    log = _EvaluationLog(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = differential_evolution(
            screen,
            _bounds(fields),
            popsize=cfg["popsize"],
            maxiter=cfg["maxiter"],
            tol=cfg["tol"],
            seed=cfg["seed"],
            polish=False,
            updating="deferred",
            workers=log,
        )
    candidates = [result.x] + log.best(max(1, int(np.ceil(cfg["refine_fraction"] * cfg["popsize"] * 2))))
    best = None
    for x in candidates:
        try:
            report = rate_at_fixed_params(behavior, x[0], x[1], m=m, level=level, f_e=f_e, **kwargs)
        except ALL_PIPELINE_EXCEPTIONS:
            continue
        if best is None or report.rate > best.rate:
            best = report
    return best


# Threshold sweeps


def _eta_model(template, eta, symmetric=True):
    if symmetric:
        return template.replace(eta_a=eta, eta_b=eta)
    scale = eta / max(template.eta_a, template.eta_b)
    return template.replace(eta_a=template.eta_a * scale, eta_b=template.eta_b * scale)


def _optimized_rate(eta, template, sweep_cfg, kwargs):
    try:
        best, report = optimize_params(_eta_model(template, eta, sweep_cfg["symmetric"]), **kwargs)
    except ALL_PIPELINE_EXCEPTIONS as e:
        print(f"Caught the following exception for eta={eta}")
        print(e)
        return -np.inf, None
    return report.rate, {
        "spdc": spdc_model.spdc_params_to_dict(best["spdc"]),
        "p": best["preprocess"].p,
        "p_n": best["preprocess"].p_n,
    }


def threshold_sweep(
    template,
    etas,
    f_e=1.0,
    preprocessing=True,
    preprocess_template=None,
    m=8,
    level="2+ABZ+AZZ",
    sweep_params=None,
    optimizer_params=None,
    solver_cfg=None,
    bff_params=None,
    verbose=True,
):
    """Optimized rate on an efficiency grid, and the threshold efficiency.

    The threshold is located on the first sign change of the grid and refined
    by bisection down to `bisection_tol`; it is the upper end of the final
    bracket, i.e. the smallest evaluated efficiency with a positive rate.
    """
    cfg = utils.validate_params(sweep_params, SWEEP_PARAMS, "threshold_sweep", verbose=verbose)
    etas = [float(e) for e in etas]
    if etas != sorted(etas):
        raise ConfigError("Efficiency grid must be sorted")
    kwargs = dict(
        preprocess_template=preprocess_template,
        f_e=f_e,
        m=m,
        level=level,
        preprocessing=preprocessing,
        optimizer_params=optimizer_params,
        solver_cfg=solver_cfg,
        bff_params=bff_params,
    )
    evaluate = partial(_optimized_rate, template=template, sweep_cfg=cfg, kwargs=kwargs)
    if verbose:
        print(f"Sweep N={len(etas)} efficiencies (f_e={f_e}, preprocessing={preprocessing})")
    results = _map(evaluate, etas, cfg["n_jobs"], verbose=verbose)
    rates = [r for r, _ in results]
    best_params = [p for _, p in results]

    positive = [r > cfg["positive_rate"] for r in rates]
    threshold, bisection = None, []
    if positive and positive[0]:
        threshold = etas[0]
    elif any(positive):
        i = positive.index(True)
        lo, hi = etas[i - 1], etas[i]
        while hi - lo > cfg["bisection_tol"]:
            mid = 0.5 * (lo + hi)
            rate, _ = evaluate(mid)
            bisection.append((mid, rate))
            if verbose:
                print(f"Bisection: eta={mid:.4f}, rate={rate:.3e}")
            if rate > cfg["positive_rate"]:
                hi = mid
            else:
                lo = mid
        threshold = hi
    if verbose:
        print(f"Threshold efficiency: {threshold}")
    return SweepResult(
        etas=etas,
        rates=rates,
        best_params=best_params,
        threshold=threshold,
        bisection=bisection,
        f_e=f_e,
        preprocessing=preprocessing,
    )


def plot_sweep(result, filepath=None, ax=None):
    import matplotlib.pyplot as plt

    if ax is None:
        _, ax = plt.subplots(figsize=(6, 4))
    frame = result.to_frame()
    ax.semilogy(frame["eta"], frame["rate"].clip(lower=1e-12), "o-", label="optimized rate")
    if result.threshold is not None:
        ax.axvline(result.threshold, color="k", linestyle="--", label=f"threshold {result.threshold:.3f}")
    ax.set_xlabel("Detection efficiency")
    ax.set_ylabel("Key rate (bits/pulse)")
    ax.legend()
    if filepath is not None:
        ax.figure.savefig(filepath, bbox_inches="tight")
    return ax


# End-to-end analysis


class KeyRateModel(object):
    """Key rate of measured statistics.

    Pipeline: counts -> frequencies -> projection onto the quantum set ->
    preprocessing statistics -> entropy bound -> rate -> Hoeffding delta.

    Args:
        preprocess_params (PreprocessParams)

    Kwargs:
        counts (array-like): Integer tensor [a, b, x, y]. Required unless
            `behavior` is given.
        rounds (array-like): Rounds per setting [x, y]. Default: count sums.
        behavior (Behavior): Use instead of counts (e.g. already projected).
        project (bool): Project onto the quantum set before bounding.
            (default True)
        n_rounds (int): Total rounds for delta when `behavior` is given.
        m (int), level (str): Entropy-bound configuration.
        f_e (float): Error-correction efficiency (>= 1).
        epsilon (float): Error probability of the confidence interval.
        projection_params, solver_cfg, bff_params (dict): Stage parameters.
        verbose (bool): (default True)
    """

    def __init__(
        self,
        preprocess_params,
        counts=None,
        rounds=None,
        behavior=None,
        project=True,
        n_rounds=None,
        m=8,
        level="2+ABZ+AZZ",
        f_e=1.0,
        epsilon=1e-2,
        projection_params=None,
        solver_cfg=None,
        bff_params=None,
        dataset=None,
        verbose=True,
    ):
        if (counts is None) == (behavior is None):
            raise ConfigError("Provide exactly one of `counts` or `behavior`")
        if counts is not None:
            counts = np.asarray(counts)
            if rounds is None:
                rounds = counts.sum(axis=(0, 1))
            self.raw = correlations.from_counts(counts, rounds)
            n_rounds = int(np.sum(rounds))
        else:
            self.raw = behavior
        self.rounds = rounds
        self.n_rounds = n_rounds
        self.preprocess_params = preprocess_params
        self.project = project
        self.m = m
        self.level = str(level)
        self.f_e = f_e
        self.epsilon = epsilon
        self.projection_params = projection_params
        self.solver_cfg = solver_cfg
        self.bff_params = bff_params
        self.dataset = dataset
        self.verbose = verbose

        self.report = None
        self.output_info = None

    def run(self):
        output_info = {"raw_no_signaling_residual": correlations.no_signaling_residual(self.raw)}
        behavior = self.raw
        if self.project:
            if self.verbose:
                print("Project raw frequencies onto the quantum set")
            projection = estimation.project_to_quantum(
                self.raw,
                solver_cfg=self.solver_cfg,
                params=self.projection_params,
                rounds=self.rounds,
                verbose=self.verbose,
            )
            behavior = projection.projected
            output_info["projection"] = projection.to_dict()

        if self.verbose:
            print(f"Bound the entropy: m={self.m}, level={self.level}")
        report = rate_from_behavior(
            behavior,
            self.preprocess_params,
            m=self.m,
            level=self.level,
            f_e=self.f_e,
            solver_cfg=self.solver_cfg,
            bff_params=self.bff_params,
            verbose=self.verbose,
        )
        if self.n_rounds is not None:
            report.delta = estimation.hoeffding_delta(
                estimation.confidence_params(
                    report.entropy_bound.dual_functional, self.n_rounds, epsilon=self.epsilon
                )
            )
        if self.dataset is not None:
            report.params["dataset"] = self.dataset
        report.config["epsilon"] = self.epsilon
        report.config["project"] = self.project
        report.fingerprint = utils.config_fingerprint(report.config)
        output_info["behavior"] = correlations.behavior_to_dict(behavior)
        if self.verbose:
            print(f"Key rate: {report.rate:.4e} bits/pulse, delta={report.delta}")
        self.report, self.output_info = report, output_info
        return self.report, self.output_info


def read_settings_table(filepath=None):
    return pd.read_csv(filepath if filepath is not None else utils.data_path(SETTINGS_TABLE))


def _analyze_fiber(fiber_m, table, settings_row, kwargs, verbose):
    counts, rounds = correlations.counts_from_table(table, fiber_m)
    model = KeyRateModel(
        preprocess.PreprocessParams(p=float(settings_row["p"]), p_n=float(settings_row["p_n"])),
        counts=counts,
        rounds=rounds,
        dataset=f"{fiber_m} m",
        verbose=verbose,
        **kwargs,
    )
    try:
        report, output_info = model.run()
        output_info["raised_exception"] = False
        output_info["exception"] = None
    except ALL_PIPELINE_EXCEPTIONS as e:
        print(f"Caught the following exception for fiber={fiber_m} m")
        print(e)
        report = None
        output_info = {"raised_exception": True, "exception": repr(e)}
    output_info["fiber_m"] = fiber_m
    return report, output_info


def analyze_fibers(table=None, settings=None, n_jobs=1, verbose=True, **kwargs):
    """Analyze every fiber length of a count table at its published (p, p_n).

    Returns:
        (pd.DataFrame summary, dict {fiber_m: KeyRateReport or None})
    """
    if table is None:
        table = correlations.read_count_table(utils.data_path(COUNTS_TABLE))
    if settings is None:
        settings = read_settings_table()
    settings = settings.set_index("fiber_m")
    fibers = [f for f in table["fiber_m"].unique() if f in settings.index]
    if verbose:
        print(f"Analyze N={len(fibers)} fiber lengths: {list(fibers)}")
    args = [(f, table, settings.loc[f], kwargs, verbose) for f in fibers]
    if n_jobs == 1:
        results = [_analyze_fiber(*a) for a in tqdm(args, disable=not verbose)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs, backend="multiprocessing")(delayed(_analyze_fiber)(*a) for a in args)

    rows, reports = [], {}
    for fiber_m, (report, info) in zip(fibers, results):
        published = settings.loc[fiber_m]
        rows.append(
            {
                "fiber_m": fiber_m,
                "p": published["p"],
                "p_n": published["p_n"],
                "rate": report.rate if report else np.nan,
                "published_rate": published["rate"],
                "bound": report.entropy_bound.bound if report else np.nan,
                "ec_cost": report.ec_cost if report else np.nan,
                "p_v": report.p_v if report else np.nan,
                "delta": report.delta if report else np.nan,
                "published_delta": published["delta"],
                "raised_exception": info["raised_exception"],
                "exception": info["exception"],
            }
        )
        reports[fiber_m] = report
    return pd.DataFrame(rows), reports
