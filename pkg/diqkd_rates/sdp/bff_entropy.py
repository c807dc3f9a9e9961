"""
Lower bound on the conditional entropy H(A|E) of the preprocessed key bit.

With Gauss-Radau nodes t_1 < ... < t_m = 1 and weights w_i on [0, 1], the
bound is

    c_m + sum_{i<m} w_i / (t_i ln 2) * sum_a <M^_a (Z + Z* + (1 - t_i) Z* Z)
                                              + t_i (M^_0 + M^_1) Z Z*>

minimized over quantum realizations of the pinned behavior, with
c_m = -1 / (m^2 ln 2) + sum_i w_i / (t_i ln 2), Z = Z_{a,i} and
M^_a = (1 - p_n) M_a + p_n M_{a+1},
M_a = (1 / p_V) sum_b omega_ab M^A_{a|x_key} M^B_{b|y_key}.

The infimum is relaxed to a moment SDP ("joint": one program for every
node, "per_node": one program per node) and certified by its dual.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from tqdm import tqdm

from ..correlations import (
    DEFAULT_SCENARIO,
    OUTCOME_PAIRS,
    Behavior,
    CollinsGisinVector,
    behavior_key,
    no_signaling_residual,
)
from ..exceptions import ConfigError, InfeasiblePinsError, SolverFailure
from .. import preprocess, utils
from . import npa_relax, solver
from .npa_relax import A, B, Z, outcome_projector, poly_add, poly_mul, poly_scale

LN2 = np.log(2)
NO_SIGNALING_TOL = 1e-6

BFF_PARAMS = {
    "mode": "joint",  # "joint" (one SDP for all nodes) or "per_node" (one SDP per node, looser)
    "norm_scale": 1.5,  # alpha_i = norm_scale * max(1/t_i, 1/(1 - t_i))
    "localizing_level": 0,  # Norm constraints <w*(alpha - ZZ*)w> >= 0 for words w up to this length
    "localizing_matrices": False,  # Full localizing matrices over the level-1 basis
    "moment_field": "complex",  # "complex" (Hermitian embedding) or "real"
    "n_jobs": 1,  # Parallel node SDPs in "per_node" mode
}


@dataclass(frozen=True)
class Quadrature:
    m: int
    nodes: tuple
    weights: tuple

    def __post_init__(self):
        assert len(self.nodes) == len(self.weights) == self.m
        assert self.nodes[-1] == 1.0, "Radau endpoint must be exactly 1"

    def integrate(self, f):
        return float(sum(w * f(t) for t, w in zip(self.nodes, self.weights)))


def gauss_radau(m):
    """m-point Gauss-Radau rule for the constant weight on [0, 1], node t_m = 1.

    Eigen-decomposition of the shifted-Legendre Jacobi matrix with its last
    diagonal entry modified so that 1 is an eigenvalue.
    """
    if int(m) != m or m < 1:
        raise ConfigError(f"Quadrature size m must be an integer >= 1, got {m}")
    m = int(m)
    if m == 1:
        return Quadrature(1, (1.0,), (1.0,))
    k = np.arange(1, m)
    beta = k**2 / (4.0 * (4.0 * k**2 - 1))  # squared off-diagonals
    diag = np.full(m, 0.5)
    # (J_{m-1} - I) delta = beta_{m-1} e_{m-1}
    J = np.diag(diag[:-1] - 1.0) + np.diag(np.sqrt(beta[:-1]), 1) + np.diag(np.sqrt(beta[:-1]), -1)
    rhs = np.zeros(m - 1)
    rhs[-1] = beta[-1]
    delta = np.linalg.solve(J, rhs)
    diag[-1] = 1.0 + delta[-1]
    nodes, vectors = eigh_tridiagonal(diag, np.sqrt(beta))
    weights = vectors[0, :] ** 2
    order = np.argsort(nodes)
    nodes, weights = nodes[order], weights[order]
    nodes[-1] = 1.0
    weights = weights / weights.sum()
    return Quadrature(m, tuple(float(t) for t in nodes), tuple(float(w) for w in weights))


def c_m(q):
    nodes, weights = np.array(q.nodes), np.array(q.weights)
    return float(-1 / (q.m**2 * LN2) + np.sum(weights / (nodes * LN2)))


def alpha_bounds(q, norm_scale=1.5):
    """Operator-norm bounds alpha_i for the nodes i < m."""
    return [norm_scale * max(1 / t, 1 / (1 - t)) for t in q.nodes[:-1]]


def node_coefficient(q, i):
    """w_i / (t_i ln 2), 1-based node index."""
    return q.weights[i - 1] / (q.nodes[i - 1] * LN2)


# Bell functionals


class BellFunctional(object):
    """Affine functional g(P) = alpha + sum lambda_{abxy} P(a,b|x,y).

    Args:
        alpha (float)
        lam (dict): {(a, b, x, y): coefficient}, 1-based inputs. Missing
            entries are zero.
    """

    def __init__(self, alpha, lam):
        self.alpha = float(alpha)
        self.lam = {
            (a, b, x, y): float(lam.get((a, b, x, y), 0.0))
            for x, y in DEFAULT_SCENARIO.settings
            for a, b in OUTCOME_PAIRS
        }

    @property
    def lam_tensor(self):
        t = np.zeros(Behavior.shape)
        for (a, b, x, y), v in self.lam.items():
            t[a, b, x - 1, y - 1] = v
        return t

    @property
    def lambda_max(self):
        return max(abs(v) for v in self.lam.values())

    def evaluate(self, behavior):
        return float(self.alpha + np.sum(self.lam_tensor * behavior.p))

    def collins_gisin_form(self):
        """(beta, gamma) with g = beta + gamma . h on no-signaling behaviors."""
        lam = self.lam_tensor
        beta = self.alpha + lam[0, 0].sum()
        gamma_a = (lam[1, 0] - lam[0, 0]).sum(axis=1)
        gamma_b = (lam[0, 1] - lam[0, 0]).sum(axis=0)
        gamma_ab = (lam[1, 1] - lam[1, 0] - lam[0, 1] + lam[0, 0]).ravel()
        return float(beta), np.concatenate([gamma_a, gamma_b, gamma_ab])

    def evaluate_cg(self, h):
        if isinstance(h, CollinsGisinVector):
            h = h.as_array()
        beta, gamma = self.collins_gisin_form()
        return float(beta + gamma @ np.asarray(h))

    def __add__(self, other):
        return BellFunctional(
            self.alpha + other.alpha,
            {k: v + other.lam[k] for k, v in self.lam.items()},
        )

    def __repr__(self):
        beta, gamma = self.collins_gisin_form()
        return f"BellFunctional(beta={beta:.4f}, gamma={np.round(gamma, 4).tolist()})"


def functional_to_dict(g):
    beta, gamma = g.collins_gisin_form()
    return {
        "alpha": g.alpha,
        "lambda": {behavior_key(*k): v for k, v in g.lam.items()},
        "collins_gisin": {"beta": beta, "gamma": list(gamma)},
    }


def functional_from_dict(d):
    try:
        lam = {}
        for x, y in DEFAULT_SCENARIO.settings:
            for a, b in OUTCOME_PAIRS:
                lam[(a, b, x, y)] = float(d["lambda"].get(behavior_key(a, b, x, y), 0.0))
        return BellFunctional(float(d["alpha"]), lam)
    except (KeyError, TypeError, AttributeError) as e:
        raise ConfigError(f"Malformed Bell functional JSON: {e}")


def dual_bell_functional(result, pins=None, offset=0.0):
    """Certificate g(P) = offset + alpha + sum lambda P from a solved relaxation.

    Args:
        result (SolverSolution): certified (optimal or near-optimal with dual).
        pins (iterable): pin ids (a, b, x, y) to read; default all 24.
    """
    if not result.is_certified:
        raise SolverFailure(
            f"Dual functional needs a certified solve, got status '{result.status}'",
            solution=result,
        )
    multipliers = result.dual_multipliers
    if pins is None:
        pins = [k for k in multipliers if isinstance(k, tuple)]
    lam = {tuple(k): multipliers.get(tuple(k), 0.0) for k in pins}
    return BellFunctional(offset + multipliers.get("normalization", 0.0), lam)


# Entropy objective


def key_measurements(p, p_n, p_v, scenario=DEFAULT_SCENARIO):
    """[M^_0, M^_1] as polynomials in the key-input projectors."""
    omega = preprocess.selection_weights(p).reshape(2, 2)
    x_key, y_key = scenario.key_input_a, scenario.key_input_b
    M = []
    for a in (0, 1):
        terms = [
            poly_scale(
                poly_mul(outcome_projector(A(x_key), a), outcome_projector(B(y_key), b)),
                omega[a, b] / p_v,
            )
            for b in (0, 1)
        ]
        M.append(poly_add(*terms))
    return [
        poly_add(poly_scale(M[a], 1 - p_n), poly_scale(M[1 - a], p_n)) if p_n else M[a]
        for a in (0, 1)
    ]


def entropy_objective(node, t, p, p_n, p_v, scenario=DEFAULT_SCENARIO):
    """sum_a M^_a (Z + Z* + (1-t) Z*Z) + t (M^_0 + M^_1) Z Z* for one node (unscaled)."""
    M_hat = key_measurements(p, p_n, p_v, scenario)
    M_sum = poly_add(*M_hat)
    terms = []
    for a in (0, 1):
        z, z_dag = Z(a, node), Z(a, node, True)
        inner = poly_add(
            {(z,): 1.0},
            {(z_dag,): 1.0},
            {(z_dag, z): 1 - t},
        )
        terms.append(poly_mul(M_hat[a], inner))
        terms.append(poly_mul(M_sum, {(z, z_dag): t}))
    return poly_add(*terms)


def behavior_pins(behavior):
    return [
        (a, b, x, y, behavior.prob(a, b, x, y))
        for x, y in DEFAULT_SCENARIO.settings
        for a, b in OUTCOME_PAIRS
    ]


@dataclass
class EntropyBoundResult:
    bound: float  # certified (dual) value in bits
    c_m: float
    per_node_terms: list  # scaled node contributions at the primal optimum
    solver_status: str
    dual_functional: BellFunctional
    primal_bound: float = None
    m: int = None
    level: str = None
    mode: str = None
    p_v: float = None
    node_statuses: list = field(default_factory=list)

    def to_dict(self):
        return {
            "bound": self.bound,
            "primal_bound": self.primal_bound,
            "c_m": self.c_m,
            "per_node_terms": list(self.per_node_terms),
            "solver_status": self.solver_status,
            "node_statuses": list(self.node_statuses),
            "m": self.m,
            "level": self.level,
            "mode": self.mode,
            "p_v": self.p_v,
            "dual_functional": functional_to_dict(self.dual_functional),
        }


def _raise_for_status(solution, context):
    if solution.status == solver.INFEASIBLE:
        raise InfeasiblePinsError(solution=solution)
    if not solution.is_certified:
        raise SolverFailure(
            f"{context}: solver status '{solution.status}' ({solution.diagnostics})",
            solution=solution,
        )
    if solution.status == solver.NEAR_OPTIMAL:
        warnings.warn(f"{context}: near-optimal solve ({solution.diagnostics})")


def _assemble_nodes(nodes, q, pins, key_args, level, params, scenario):
    alphas = alpha_bounds(q, params["norm_scale"])
    node_polys = {
        i: poly_scale(entropy_objective(i, q.nodes[i - 1], *key_args, scenario=scenario), node_coefficient(q, i))
        for i in nodes
    }
    problem = npa_relax.assemble(
        scenario=scenario,
        behavior_constraints=pins,
        objective=poly_add(*node_polys.values()),
        norm_bounds=[((a, i), alphas[i - 1]) for i in nodes for a in (0, 1)],
        level=level,
        z_labels=[(a, i) for i in nodes for a in (0, 1)],
        sense="min",
        moment_field=params["moment_field"],
        localizing_level=params["localizing_level"],
        localizing_matrices=params["localizing_matrices"],
    )
    return problem, node_polys


def _solve_nodes(nodes, q, pins, key_args, level, params, solver_cfg, scenario):
    """Assemble and solve one relaxation covering `nodes`. Returns (solution, node terms)."""
    problem, node_polys = _assemble_nodes(nodes, q, pins, key_args, level, params, scenario)
    solution = solver.solve(problem, solver_cfg)
    _raise_for_status(solution, f"Entropy bound (nodes {list(nodes)})")
    terms = []
    for i in nodes:
        row = problem.registry.real_part(node_polys[i])
        terms.append(float(sum(v * solution.moments[col] for col, v in row.items())))
    return solution, terms


def _run_joint(q, pins, key_args, level, params, solver_cfg, scenario, verbose=False):
    nodes = list(range(1, q.m))
    if verbose:
        print(f"Solve joint relaxation: m={q.m}, level={level}, {len(nodes)} nodes")
    solution, terms = _solve_nodes(nodes, q, pins, key_args, level, params, solver_cfg, scenario)
    return solution.dual_value, terms, dual_bell_functional(solution), [solution.status]


def _run_per_node(q, pins, key_args, level, params, solver_cfg, scenario, verbose=False):
    nodes = list(range(1, q.m))
    args = (q, pins, key_args, level, params, solver_cfg, scenario)
    if params["n_jobs"] == 1:
        results = [_solve_nodes([i], *args) for i in tqdm(nodes, disable=not verbose)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=params["n_jobs"], backend="multiprocessing")(
            delayed(_solve_nodes)([i], *args) for i in nodes
        )
    value = sum(sol.dual_value for sol, _ in results)
    terms = [t for _, node_terms in results for t in node_terms]
    g = BellFunctional(0.0, {})
    for sol, _ in results:
        g = g + dual_bell_functional(sol)
    return value, terms, g, [sol.status for sol, _ in results]


METHODS = {
    "joint": _run_joint,
    "per_node": _run_per_node,
}


def entropy_bound(
    behavior,
    params,
    m=8,
    level="2+ABZ+AZZ",
    solver_cfg=None,
    bff_params=None,
    scenario=DEFAULT_SCENARIO,
    verbose=False,
):
    """Certified lower bound (bits) on H(A|E) after preprocessing.

    Args:
        behavior (Behavior): projected (quantum) statistics; all 24 entries
            are pinned.
        params (PreprocessParams)

    Kwargs:
        m (int): Quadrature size.
        level (str or LevelSpec): Relaxation level.
        solver_cfg (dict): Overrides of sdp.solver.SOLVER_PARAMS.
        bff_params (dict): Overrides of BFF_PARAMS.

    Raises:
        InfeasiblePinsError: behavior is outside the relaxed quantum set.
        SolverFailure: no certified value.
        DegenerateDistributionError: p_V = 0.
    """
    bff_params = utils.validate_params(bff_params, BFF_PARAMS, "entropy_bound", verbose=verbose)
    if bff_params["mode"] not in METHODS:
        raise ConfigError(f"Unrecognized mode. Available modes are {list(METHODS)}")
    level = npa_relax.LevelSpec.parse(level)
    residual = no_signaling_residual(behavior)
    if residual > NO_SIGNALING_TOL:
        raise InfeasiblePinsError(
            f"Behavior signals (residual {residual:.2e} > {NO_SIGNALING_TOL:.0e}); "
            "project the raw frequencies onto the quantum set first."
        )

    key_dist = behavior.key_distribution(scenario)
    p_v = preprocess.retention_probability(key_dist, params.p)
    preprocess.postselect(key_dist, params.p)  # raises on p_V = 0
    q = gauss_radau(m)
    cm = c_m(q)

    if q.m == 1:
        return EntropyBoundResult(
            bound=cm,
            c_m=cm,
            per_node_terms=[],
            solver_status=solver.OPTIMAL,
            dual_functional=BellFunctional(cm, {}),
            primal_bound=cm,
            m=q.m,
            level=str(level),
            mode=bff_params["mode"],
            p_v=p_v,
        )

    value, terms, g, statuses = METHODS[bff_params["mode"]](
        q,
        behavior_pins(behavior),
        (params.p, params.p_n, p_v),
        level,
        bff_params,
        solver_cfg,
        scenario,
        verbose=verbose,
    )
    status = solver.OPTIMAL if all(s == solver.OPTIMAL for s in statuses) else solver.NEAR_OPTIMAL
    result = EntropyBoundResult(
        bound=cm + value,
        c_m=cm,
        per_node_terms=terms,
        solver_status=status,
        dual_functional=BellFunctional(g.alpha + cm, g.lam),
        primal_bound=cm + sum(terms),
        m=q.m,
        level=str(level),
        mode=bff_params["mode"],
        p_v=p_v,
        node_statuses=statuses,
    )
    if verbose:
        print(f"Entropy bound: {result.bound:.6f} bits (primal {result.primal_bound:.6f}, status {status})")
    return result


def entropy_problem(behavior, params, m=8, level="2+ABZ+AZZ", bff_params=None, scenario=DEFAULT_SCENARIO):
    """The joint relaxation over all nodes i < m, objective included, unsolved."""
    bff_params = utils.validate_params(bff_params, BFF_PARAMS, "entropy_problem")
    level = npa_relax.LevelSpec.parse(level)
    key_dist = behavior.key_distribution(scenario)
    p_v = preprocess.retention_probability(key_dist, params.p)
    preprocess.postselect(key_dist, params.p)
    q = gauss_radau(m)
    if q.m == 1:
        raise ConfigError("m = 1 has no relaxation to assemble")
    problem, _ = _assemble_nodes(
        list(range(1, q.m)),
        q,
        behavior_pins(behavior),
        (params.p, params.p_n, p_v),
        level,
        bff_params,
        scenario,
    )
    return problem
