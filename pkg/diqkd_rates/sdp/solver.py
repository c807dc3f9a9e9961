"""cvxpy adapter: solves a MomentProblem and its explicit dual.

Internally every problem is a minimization of c . y subject to
    E y = b,  G y >= 0,  mat(S_k y) >> 0.
The dual
    max -b . nu  s.t.  c + E^T nu - G^T mu - sum_k S_k^T vec(X_k) = 0,
                      mu >= 0,  X_k >> 0
is solved as a second program. Any dual-feasible point gives
c . y >= -b' . nu for every right-hand side b', so the equality multipliers
are an affine certificate valid beyond the pinned behavior.
"""
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from ..exceptions import SolverFailure
from .. import utils

SOLVER_PARAMS = {
    "solver": "CLARABEL",  # any cvxpy solver with PSD cones: CLARABEL, SCS, MOSEK, CVXOPT
    "fallback_solver": "SCS",  # used when `solver` is missing or raises. None to disable
    "gap_tol": 1e-7,  # (relative) max |primal - dual| / max(1, |primal|) for "optimal"
    "solve_dual": True,  # Solve the explicit dual for certified values and multipliers
    "solver_options": None,  # (dict) keyword arguments forwarded to cvxpy's solve()
    "verbose": False,  # Solver log
}

OPTIMAL = "optimal"
NEAR_OPTIMAL = "near-optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"

CERTIFIED_STATUSES = (OPTIMAL, NEAR_OPTIMAL)


@dataclass
class SolverSolution:
    """Status-tagged result, values in the problem's own sense (min or max).

    `dual_multipliers` maps each equality id to its coefficient in the affine
    certificate g(P) = alpha + sum_k lambda_k P_k: "normalization" holds alpha,
    pin ids (a, b, x, y) hold lambda. For minimizations g(P) <= optimum(P)
    for every behavior P, for maximizations g(P) >= optimum(P).
    """

    status: str
    primal_value: float = None
    dual_value: float = None
    dual_residual: float = None  # max violation of dual feasibility (stationarity, cones)
    dual_accurate: bool = False
    dual_multipliers: dict = field(default_factory=dict)
    moments: np.ndarray = None
    solver: str = None
    diagnostics: str = ""

    @property
    def is_certified(self):
        return self.status in CERTIFIED_STATUSES and self.dual_value is not None and self.dual_accurate

    @property
    def gap(self):
        if self.primal_value is None or self.dual_value is None:
            return None
        return abs(self.primal_value - self.dual_value)

    @property
    def certified_value(self):
        """Dual value if available, the value a caller may rely on."""
        if not self.is_certified:
            raise SolverFailure(
                f"No certified value: solver status '{self.status}'. {self.diagnostics}",
                solution=self,
            )
        return self.dual_value

    def to_dict(self):
        return {
            "status": self.status,
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "dual_residual": self.dual_residual,
            "solver": self.solver,
            "diagnostics": self.diagnostics,
        }


def _sparse_rows(constraints, n_columns):
    if not constraints:
        return sp.csr_matrix((0, n_columns))
    rows, cols, vals = [], [], []
    for r, c in enumerate(constraints):
        for col, v in c.coefficients.items():
            rows.append(r)
            cols.append(col)
            vals.append(v)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(constraints), n_columns))


def moment_constraints(problem, y):
    """cvxpy constraints of `problem` over the column variable `y`."""
    n = problem.n_columns
    E = _sparse_rows(problem.eq_constraints, n)
    b = np.array([c.rhs for c in problem.eq_constraints])
    constraints = [E @ y == b]
    if problem.op_ineq:
        constraints.append(_sparse_rows(problem.op_ineq, n) @ y >= 0)
    for block in problem.psd_blocks:
        constraints.append(cp.reshape(block.coefficients @ y, (block.size, block.size), order="F") >> 0)
    return constraints


def call_solver(prob, cfg):
    """Solve with cfg['solver'], falling back to cfg['fallback_solver']. Returns solver name."""
    options = cfg["solver_options"] or {}
    candidates = [cfg["solver"]]
    if cfg["fallback_solver"] and cfg["fallback_solver"] != cfg["solver"]:
        candidates.append(cfg["fallback_solver"])
    installed = cp.installed_solvers()
    errors = []
    for i, name in enumerate(candidates):
        if name not in installed:
            errors.append(f"{name}: not installed")
            continue
        try:
            prob.solve(solver=name, verbose=cfg["verbose"], **(options if i == 0 else {}))
        except cp.error.SolverError as e:
            errors.append(f"{name}: {e}")
            continue
        if i > 0:
            warnings.warn(f"Solver fallback to {name} ({'; '.join(errors)})")
        return name
    raise cp.error.SolverError("; ".join(errors))


@dataclass
class DualResult:
    status: str  # cvxpy status
    value: float
    nu: np.ndarray
    solver: str
    residual: float


def _solve_dual(problem, c, cfg):
    n = problem.n_columns
    E = _sparse_rows(problem.eq_constraints, n)
    b = np.array([con.rhs for con in problem.eq_constraints])
    nu = cp.Variable(len(problem.eq_constraints))
    stationarity = c + E.T @ nu
    mu, blocks = None, []
    if problem.op_ineq:
        mu = cp.Variable(len(problem.op_ineq), nonneg=True)
        stationarity = stationarity - _sparse_rows(problem.op_ineq, n).T @ mu
    for block in problem.psd_blocks:
        X = cp.Variable((block.size, block.size), PSD=True)
        blocks.append(X)
        stationarity = stationarity - block.coefficients.T @ cp.reshape(X, (block.size**2,), order="F")
    prob = cp.Problem(cp.Maximize(-b @ nu), [stationarity == 0])
    solver = call_solver(prob, cfg)
    if nu.value is None:
        return DualResult(prob.status, None, None, solver, np.inf)

    residual = float(np.max(np.abs(stationarity.value), initial=0.0))
    if mu is not None:
        residual = max(residual, float(-mu.value.min()))
    for X in blocks:
        X_sym = (X.value + X.value.T) / 2
        residual = max(residual, float(-np.linalg.eigvalsh(X_sym).min()))
    return DualResult(prob.status, prob.value, np.asarray(nu.value), solver, residual)


def solve(problem, solver_cfg=None):
    """Solve `problem`. Never raises on solver trouble: inspect `status`.

    Returns:
        SolverSolution
    """
    cfg = utils.validate_params(solver_cfg, SOLVER_PARAMS, "solve")
    sense = 1.0 if problem.sense == "min" else -1.0
    c = sense * problem.objective_vector()

    y = cp.Variable(problem.n_columns)
    primal = cp.Problem(cp.Minimize(c @ y), moment_constraints(problem, y))
    try:
        solver = call_solver(primal, cfg)
    except cp.error.SolverError as e:
        return SolverSolution(NUMERICAL_FAILURE, diagnostics=f"Primal solve failed: {e}")

    if primal.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SolverSolution(INFEASIBLE, solver=solver, diagnostics=f"cvxpy status: {primal.status}")
    if primal.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or y.value is None:
        return SolverSolution(NUMERICAL_FAILURE, solver=solver, diagnostics=f"cvxpy status: {primal.status}")

    primal_value = sense * primal.value + problem.objective_offset
    solution = SolverSolution(
        NEAR_OPTIMAL if primal.status == cp.OPTIMAL_INACCURATE else OPTIMAL,
        primal_value=float(primal_value),
        moments=np.asarray(y.value),
        solver=solver,
        diagnostics=f"cvxpy status: {primal.status}",
    )
    if not cfg["solve_dual"]:
        solution.status = NEAR_OPTIMAL
        solution.diagnostics += "; dual not solved"
        return solution

    try:
        dual = _solve_dual(problem, c, cfg)
    except cp.error.SolverError as e:
        solution.status = NEAR_OPTIMAL
        solution.diagnostics += f"; dual solve failed: {e}"
        return solution
    if dual.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or dual.nu is None:
        solution.status = NEAR_OPTIMAL
        solution.diagnostics += f"; dual status: {dual.status}"
        return solution

    solution.dual_value = float(sense * dual.value + problem.objective_offset)
    solution.dual_residual = dual.residual
    # an inaccurate dual point only certifies when it is feasible to within gap_tol
    solution.dual_accurate = dual.status == cp.OPTIMAL or dual.residual <= cfg["gap_tol"]
    solution.dual_multipliers = {
        con.id: float(-sense * v) for con, v in zip(problem.eq_constraints, dual.nu)
    }
    if "normalization" in solution.dual_multipliers:
        solution.dual_multipliers["normalization"] += problem.objective_offset
    if solution.gap > cfg["gap_tol"] * max(1.0, abs(solution.primal_value)):
        solution.status = NEAR_OPTIMAL
        solution.diagnostics += f"; duality gap {solution.gap:.3e}"
    elif dual.status == cp.OPTIMAL_INACCURATE:
        solution.status = NEAR_OPTIMAL
        solution.diagnostics += f"; dual inaccurate (residual {dual.residual:.3e})"
    if not solution.dual_accurate:
        solution.diagnostics += "; dual point not certified"
    return solution
