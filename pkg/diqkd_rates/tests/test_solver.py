import cvxpy as cp
import numpy as np
import pytest

from diqkd_rates import correlations
from diqkd_rates.exceptions import SolverFailure
from diqkd_rates.sdp import npa_relax, solver
from diqkd_rates.sdp.bff_entropy import behavior_pins, dual_bell_functional
from diqkd_rates.sdp.npa_relax import A, B

TSIRELSON = 2 * np.sqrt(2)


def toy_problem():
    """min y1 s.t. [[1, y1], [y1, 1]] >> 0, optimum -1."""
    registry = npa_relax.MomentRegistry()
    col, _ = registry.register((A(1),))
    entries = [(0, 0, 0, 1.0), (1, 1, 0, 1.0), (0, 1, col, 1.0), (1, 0, col, 1.0)]
    return npa_relax.MomentProblem(
        basis=[],
        registry=registry,
        objective={col: 1.0},
        eq_constraints=[npa_relax.LinearConstraint("normalization", {0: 1.0}, 1.0)],
        psd_blocks=[npa_relax.PsdBlock.from_entries("toy", 2, entries, len(registry))],
    )


def correlator(x, y):
    return npa_relax.poly_mul({(A(x),): 2.0, (): -1.0}, {(B(y),): 2.0, (): -1.0})


def chsh_polynomial():
    return npa_relax.poly_add(
        correlator(1, 1),
        correlator(1, 2),
        correlator(2, 1),
        npa_relax.poly_scale(correlator(2, 2), -1.0),
    )


def pr_box_pins():
    pins = []
    for x, y in correlations.DEFAULT_SCENARIO.settings:
        for a, b in correlations.OUTCOME_PAIRS:
            if y == 3:
                value = 0.25
            else:
                value = 0.5 if (a ^ b) == (x - 1) * (y - 1) else 0.0
            pins.append((a, b, x, y, value))
    return pins


def test_toy_problem():
    solution = solver.solve(toy_problem())
    assert solution.status in solver.CERTIFIED_STATUSES
    assert solution.primal_value == pytest.approx(-1.0, abs=1e-7)
    assert solution.dual_value == pytest.approx(-1.0, abs=1e-7)
    assert solution.certified_value == pytest.approx(-1.0, abs=1e-7)
    assert solution.dual_multipliers["normalization"] == pytest.approx(-1.0, abs=1e-7)
    assert set(solution.to_dict()) == {
        "status", "primal_value", "dual_value", "gap", "dual_residual", "solver", "diagnostics"
    }
    assert solution.dual_residual <= 1e-6


def test_toy_problem_maximized():
    problem = toy_problem()
    problem.sense = "max"
    problem.objective_offset = 0.5
    solution = solver.solve(problem)
    assert solution.primal_value == pytest.approx(1.5, abs=1e-7)
    assert solution.dual_value == pytest.approx(1.5, abs=1e-7)
    assert solution.dual_multipliers["normalization"] == pytest.approx(1.5, abs=1e-7)


def test_without_dual_is_not_certified():
    solution = solver.solve(toy_problem(), {"solve_dual": False})
    assert solution.status == solver.NEAR_OPTIMAL
    assert solution.primal_value == pytest.approx(-1.0, abs=1e-7)
    with pytest.raises(SolverFailure):
        solution.certified_value


def test_missing_solver_is_a_numerical_failure():
    solution = solver.solve(toy_problem(), {"solver": "NOT_A_SOLVER", "fallback_solver": None})
    assert solution.status == solver.NUMERICAL_FAILURE
    assert "NOT_A_SOLVER" in solution.diagnostics
    with pytest.raises(SolverFailure):
        solution.certified_value


def test_fallback_solver():
    with pytest.warns(UserWarning, match="fallback to SCS"):
        solution = solver.solve(toy_problem(), {"solver": "NOT_A_SOLVER", "fallback_solver": "SCS"})
    assert solution.solver == "SCS"
    assert solution.primal_value == pytest.approx(-1.0, abs=1e-3)


@pytest.mark.parametrize("level", ["1", "2"])
def test_tsirelson_bound(level):
    problem = npa_relax.assemble(objective=chsh_polynomial(), level=level, sense="max", moment_field="real")
    solution = solver.solve(problem)
    assert solution.status in solver.CERTIFIED_STATUSES
    assert solution.primal_value == pytest.approx(TSIRELSON, abs=1e-6)
    assert solution.dual_value == pytest.approx(TSIRELSON, abs=1e-6)


def test_maximum_does_not_increase_with_level():
    values = []
    for level in ["1", "1+AB", "2"]:
        problem = npa_relax.assemble(objective=chsh_polynomial(), level=level, sense="max", moment_field="real")
        values.append(solver.solve(problem).dual_value)
    assert values[1] <= values[0] + 1e-6
    assert values[2] <= values[1] + 1e-6


def test_pr_box_is_infeasible():
    problem = npa_relax.assemble(behavior_constraints=pr_box_pins(), level="1", moment_field="real")
    solution = solver.solve(problem)
    assert solution.status == solver.INFEASIBLE
    assert not solution.is_certified


def _min_correlation(behavior):
    """min Re<A1 A2> over realizations of `behavior`."""
    problem = npa_relax.assemble(
        behavior_constraints=behavior_pins(behavior),
        objective={(A(1), A(2)): 0.5, (A(2), A(1)): 0.5},
        level="2",
    )
    return solver.solve(problem)


def test_dual_functional_is_an_affine_certificate(noisy_behavior):
    solution = _min_correlation(noisy_behavior)
    assert solution.is_certified
    assert solution.gap <= 1e-5
    g = dual_bell_functional(solution)
    assert g.evaluate(noisy_behavior) == pytest.approx(solution.dual_value, abs=1e-6)
    # The same functional lower-bounds the optimum at any other behavior
    uniform = correlations.uniform_behavior()
    for other in [uniform, correlations.mix_behaviors(noisy_behavior, uniform, 0.5)]:
        other_solution = _min_correlation(other)
        assert g.evaluate(other) <= other_solution.primal_value + 1e-6


def inaccurate_dual(monkeypatch, residual):
    """Make every dual solve report OPTIMAL_INACCURATE with the given residual."""
    solve_dual = solver._solve_dual

    def _solve_dual(problem, c, cfg):
        dual = solve_dual(problem, c, cfg)
        dual.status = cp.OPTIMAL_INACCURATE
        dual.residual = residual
        return dual

    monkeypatch.setattr(solver, "_solve_dual", _solve_dual)


def test_inaccurate_dual_is_not_certified(monkeypatch):
    inaccurate_dual(monkeypatch, 1e-3)
    solution = solver.solve(toy_problem())
    assert solution.status == solver.NEAR_OPTIMAL
    assert solution.dual_value == pytest.approx(-1.0, abs=1e-6)
    assert not solution.dual_accurate
    assert not solution.is_certified
    assert "not certified" in solution.diagnostics
    with pytest.raises(SolverFailure) as e:
        solution.certified_value
    assert e.value.solution is solution


def test_inaccurate_dual_within_tolerance_is_certified(monkeypatch):
    inaccurate_dual(monkeypatch, 1e-9)
    solution = solver.solve(toy_problem())
    assert solution.status == solver.NEAR_OPTIMAL
    assert solution.is_certified
    assert solution.certified_value == pytest.approx(-1.0, abs=1e-6)
