"""Least-squares projection onto the (relaxed) quantum set and Hoeffding confidence."""
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import pandas as pd

from .correlations import (
    DEFAULT_SCENARIO,
    OUTCOME_PAIRS,
    Behavior,
    EventRecord,
    behavior_to_dict,
)
from .exceptions import ConfigError, IngestionError, SolverFailure
from .sdp import npa_relax, solver
from . import utils

PROJECTION_PARAMS = {
    "level": "2",  # NPA level of the quantum-set relaxation (measurement operators only)
    "weighted": False,  # Weight each setting's residuals by sqrt(N_xy); needs `rounds`
    "moment_field": "real",  # "real" suffices: the data are real
}


@dataclass(frozen=True)
class ProjectionResult:
    projected: Behavior
    distance: float  # Euclidean norm over the 24 entries
    solver_status: str
    raw: Behavior = None

    def to_dict(self):
        return {
            "raw": behavior_to_dict(self.raw) if self.raw is not None else None,
            "projected": behavior_to_dict(self.projected),
            "distance": self.distance,
            "solver_status": self.solver_status,
        }


@dataclass(frozen=True)
class ConfidenceParams:
    epsilon: float
    n: int  # total rounds
    q: float  # max setting probability
    lambda_max: float  # max |lambda_abxy|

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.n < 1:
            raise ConfigError(f"n must be a positive number of rounds, got {self.n}")
        if not 0 < self.q <= 1:
            raise ConfigError(f"q must lie in (0, 1], got {self.q}")
        if self.lambda_max < 0:
            raise ConfigError(f"lambda_max must be non-negative, got {self.lambda_max}")


def _pin_order(scenario=DEFAULT_SCENARIO):
    return [(a, b, x, y) for x, y in scenario.settings for a, b in OUTCOME_PAIRS]


def _as_vector(behavior, scenario=DEFAULT_SCENARIO):
    return np.array([behavior.prob(*k) for k in _pin_order(scenario)])


def project_to_quantum(
    raw,
    level=None,
    solver_cfg=None,
    params=None,
    rounds=None,
    scenario=DEFAULT_SCENARIO,
    verbose=False,
):
    """Closest behavior (2-norm) admitting a moment-matrix certificate.

    Args:
        raw (Behavior): relative frequencies, normalized per setting.

    Kwargs:
        level (str): Overrides params["level"].
        rounds (array-like): [x, y] round counts, used when params["weighted"].
    """
    params = utils.validate_params(params, PROJECTION_PARAMS, "project_to_quantum", verbose=verbose)
    if level is not None:
        params["level"] = str(level)
    problem = npa_relax.assemble(
        scenario=scenario,
        level=params["level"],
        moment_field=params["moment_field"],
    )
    keys = _pin_order(scenario)
    R = np.zeros((len(keys), problem.n_columns))
    for r, (a, b, x, y) in enumerate(keys):
        for col, v in problem.registry.real_part(npa_relax.probability_polynomial(a, b, x, y)).items():
            R[r, col] = v
    target = _as_vector(raw, scenario)

    weights = np.ones(len(keys))
    if params["weighted"]:
        if rounds is None:
            raise ConfigError("Weighted projection needs the per-setting `rounds` table")
        rounds = np.asarray(rounds, dtype=float)
        weights = np.array([np.sqrt(rounds[x - 1, y - 1]) for _, _, x, y in keys])
        weights = weights / weights.max()

    if verbose:
        print(f"Project onto the level-{params['level']} quantum set ({problem.n_columns} moments)")
    y_var = cp.Variable(problem.n_columns)
    residual = cp.multiply(weights, R @ y_var - target)
    prob = cp.Problem(cp.Minimize(cp.norm(residual, 2)), solver.moment_constraints(problem, y_var))
    cfg = utils.validate_params(solver_cfg, solver.SOLVER_PARAMS, "solve")
    try:
        solver.call_solver(prob, cfg)
    except cp.error.SolverError as e:
        raise SolverFailure(f"Projection solve failed: {e}")
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or y_var.value is None:
        raise SolverFailure(f"Projection solve failed: cvxpy status '{prob.status}'")

    values = R @ y_var.value
    vectors = {}
    for (a, b, x, y), v in zip(keys, values):
        vectors.setdefault((x, y), np.zeros(4))[OUTCOME_PAIRS.index((a, b))] = v
    projected = Behavior.from_setting_vectors(vectors, normalize=True)
    status = solver.OPTIMAL if prob.status == cp.OPTIMAL else solver.NEAR_OPTIMAL
    distance = float(np.linalg.norm(_as_vector(projected, scenario) - target))
    if verbose:
        print(f"Projection distance: {distance:.3e} ({status})")
    return ProjectionResult(projected=projected, distance=distance, solver_status=status, raw=raw)


def hoeffding_delta(c):
    """delta = (2 lambda / q) sqrt(ln(1/eps) / (2 n))."""
    return float((2 * c.lambda_max / c.q) * np.sqrt(np.log(1 / c.epsilon) / (2 * c.n)))


def confidence_params(functional, n, scenario=DEFAULT_SCENARIO, epsilon=1e-2):
    q = max(max(row) for row in scenario.input_distribution)
    return ConfidenceParams(epsilon=epsilon, n=int(n), q=q, lambda_max=functional.lambda_max)


def _events_frame(events):
    if isinstance(events, pd.DataFrame):
        frame = events
        missing = {"x", "y", "a", "b"} - set(frame.columns)
        if missing:
            raise IngestionError(f"Event table is missing column(s): {missing}")
        for row in frame[["x", "y", "a", "b"]].drop_duplicates().itertuples(index=False):
            EventRecord(*row)
        return frame
    records = [e if isinstance(e, EventRecord) else EventRecord(*e) for e in events]
    return pd.DataFrame([(e.x, e.y, e.a, e.b) for e in records], columns=["x", "y", "a", "b"])


def estimator_from_events(events, functional, scenario=DEFAULT_SCENARIO, epsilon=1e-2):
    """g' = (1/n) sum_i lambda_{a_i b_i x_i y_i} / P(x_i, y_i), estimating g(P) - alpha.

    Args:
        events: pandas DataFrame (columns x, y, a, b) or iterable of EventRecord.
        functional (BellFunctional)

    Returns:
        (estimate, delta): delta is the Hoeffding half-width at `epsilon`
    """
    frame = _events_frame(events)
    if not len(frame):
        raise IngestionError("Empty event stream")
    lam = functional.lam_tensor
    dist = np.asarray(scenario.input_distribution)
    x = frame["x"].to_numpy() - 1
    y = frame["y"].to_numpy() - 1
    terms = lam[frame["a"].to_numpy(), frame["b"].to_numpy(), x, y] / dist[x, y]
    delta = hoeffding_delta(confidence_params(functional, len(frame), scenario, epsilon))
    return float(terms.mean()), delta


def sample_events(behavior, n, scenario=DEFAULT_SCENARIO, rng=None):
    """n i.i.d. rounds: settings from the input distribution, outcomes from `behavior`."""
    rng = np.random.default_rng(rng)
    settings = scenario.settings
    setting_probs = np.array([scenario.setting_probability(x, y) for x, y in settings])
    idx = rng.choice(len(settings), size=n, p=setting_probs)
    frames = []
    for s, (x, y) in enumerate(settings):
        k = int(np.sum(idx == s))
        if not k:
            continue
        outcomes = rng.choice(4, size=k, p=behavior.setting_vector(x, y))
        frames.append(
            pd.DataFrame(
                {
                    "x": x,
                    "y": y,
                    "a": [OUTCOME_PAIRS[o][0] for o in outcomes],
                    "b": [OUTCOME_PAIRS[o][1] for o in outcomes],
                }
            )
        )
    return pd.concat(frames, ignore_index=True)
