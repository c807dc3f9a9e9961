import json
from types import SimpleNamespace

import numpy as np
import pytest

from diqkd_rates import keyrate, preprocess, utils
from diqkd_rates.exceptions import ConfigError, SolverFailure
from diqkd_rates.preprocess import PreprocessParams
from diqkd_rates.sdp.bff_entropy import BellFunctional

# Published 20 m statistics
P_V_20M = 0.92194
BOUND_20M = 0.56021
EC_20M = 0.55995


def test_dw_rate_published_20m():
    stats = SimpleNamespace(p_v=P_V_20M, ec_cost=EC_20M)
    eb = SimpleNamespace(bound=BOUND_20M)
    assert keyrate.dw_rate(stats, eb) == pytest.approx(2.33e-4, abs=0.3e-4)
    assert keyrate.dw_rate(stats, eb, f_e=1.06) < 0


def test_dw_rate_edge_cases():
    stats = SimpleNamespace(p_v=0.5, ec_cost=0.3)
    assert keyrate.dw_rate(stats, SimpleNamespace(bound=0.3)) == 0.0
    with pytest.raises(ConfigError):
        keyrate.dw_rate(stats, SimpleNamespace(bound=0.3), f_e=0.9)


def test_ideal_model(key_preset):
    ideal = keyrate.ideal_model(key_preset)
    assert ideal.V == 1.0
    assert ideal.p_d == 0.0
    assert ideal.eta_a == key_preset.eta_a


def test_rate_at_fixed_params(noisy_behavior):
    report = keyrate.rate_at_fixed_params(noisy_behavior, 1.0, 0.0, m=2, level="2")
    assert report.rate == pytest.approx(report.p_v * (report.entropy_bound.bound - report.f_e * report.ec_cost), abs=1e-12)
    assert report.p_v == pytest.approx(1.0)
    assert report.ec_cost == pytest.approx(preprocess.ec_cost(noisy_behavior.key_distribution()))
    assert report.config["m"] == 2
    assert len(report.fingerprint) == 64
    d = report.to_dict()
    assert d["positive"] == (report.rate > 0)
    assert d["params"] == {"p": 1.0, "p_n": 0.0}


def test_fingerprint_tracks_config():
    a = keyrate.run_config(8, "2+ABZ+AZZ")
    b = keyrate.run_config(4, "2+ABZ+AZZ")
    assert a["solver"]["solver"] == "CLARABEL"
    assert keyrate.utils.config_fingerprint(a) != keyrate.utils.config_fingerprint(b)


def test_key_rate_model_from_behavior(noisy_behavior):
    model = keyrate.KeyRateModel(
        PreprocessParams(), behavior=noisy_behavior, n_rounds=10**6, m=2, level="2", verbose=False
    )
    report, output_info = model.run()
    assert report.delta > 0
    assert "projection" in output_info
    assert output_info["projection"]["distance"] < 1e-5
    assert report.config["project"] is True
    assert model.report is report


def test_key_rate_model_arguments(noisy_behavior):
    with pytest.raises(ConfigError):
        keyrate.KeyRateModel(PreprocessParams())
    with pytest.raises(ConfigError):
        keyrate.KeyRateModel(PreprocessParams(), counts=np.ones((2, 2, 2, 3)), behavior=noisy_behavior)


# Optimizer and sweeps against a cheap analytic rate


def quadratic_rate(spdc, pp, **kwargs):
    """Peaks at p = 0.3, r = 0.6."""
    return keyrate.KeyRateReport(
        rate=-((pp.p - 0.3) ** 2) - (spdc.r - 0.6) ** 2,
        p_v=1.0,
        entropy_bound=None,
        ec_cost=0.0,
        f_e=1.0,
        config={"m": kwargs["m"], "level": str(kwargs["level"])},
    )


@pytest.fixture
def cheap_rates(monkeypatch):
    monkeypatch.setattr(keyrate, "model_rate", quadratic_rate)


OPTIMIZER = {"free": ["p", "r"], "popsize": 10, "maxiter": 20, "polish_maxiter": 50, "seed": 3}


def test_optimizer_finds_the_peak(cheap_rates, key_preset):
    best, report = keyrate.optimize_params(key_preset, m=8, level="2+ABZ+AZZ", optimizer_params=OPTIMIZER)
    assert best["preprocess"].p == pytest.approx(0.3, abs=0.02)
    assert best["spdc"].r == pytest.approx(0.6, abs=0.02)
    # Fixed fields are untouched
    assert best["spdc"].eta_a == key_preset.eta_a
    assert best["spdc"].angles_a == key_preset.angles_a
    # Winner re-evaluated at the full configuration
    assert report.config["m"] == 8
    assert report.config["seed"] == 3
    assert len(report.fingerprint) == 64


def test_optimizer_dominates_template(cheap_rates, key_preset):
    template = quadratic_rate(key_preset, PreprocessParams(), m=8, level="2").rate
    _, report = keyrate.optimize_params(key_preset, optimizer_params=dict(OPTIMIZER, maxiter=1, popsize=2))
    assert report.rate >= template


def test_optimizer_is_deterministic(cheap_rates, key_preset):
    params = dict(OPTIMIZER, maxiter=5)
    first, _ = keyrate.optimize_params(key_preset, optimizer_params=params)
    second, _ = keyrate.optimize_params(key_preset, optimizer_params=params)
    assert first["preprocess"] == second["preprocess"]
    assert first["spdc"] == second["spdc"]


def test_optimizer_without_preprocessing(cheap_rates, key_preset):
    best, _ = keyrate.optimize_params(
        key_preset, preprocess_template=PreprocessParams(p=0.5, p_n=0.2), preprocessing=False, optimizer_params=OPTIMIZER
    )
    assert best["preprocess"] == PreprocessParams(p=1.0, p_n=0.0)
    assert best["spdc"].r == pytest.approx(0.6, abs=0.02)


def test_optimizer_nothing_free(cheap_rates, key_preset):
    best, report = keyrate.optimize_params(key_preset, optimizer_params={"free": []})
    assert best["spdc"] == key_preset
    assert report.rate == pytest.approx(-(0.7**2) - (key_preset.r - 0.6) ** 2)


def test_optimizer_rejects_unknown_fields(key_preset):
    with pytest.raises(ConfigError, match="free field"):
        keyrate.optimize_params(key_preset, optimizer_params={"free": ["eta"]})


def test_optimizer_all_candidates_fail(monkeypatch, key_preset):
    def failing(*args, **kwargs):
        raise SolverFailure("no certificate")

    monkeypatch.setattr(keyrate, "model_rate", failing)
    with pytest.raises(SolverFailure, match="Every refinement candidate failed"):
        keyrate.optimize_params(key_preset, optimizer_params=dict(OPTIMIZER, maxiter=1, popsize=2))


THRESHOLD = 0.862


def linear_optimum(template, **kwargs):
    rate = template.eta_a - THRESHOLD
    if rate < -0.1:
        raise SolverFailure("no certificate")
    report = SimpleNamespace(rate=rate)
    return {"spdc": template, "preprocess": PreprocessParams()}, report


@pytest.fixture
def cheap_optimizer(monkeypatch):
    monkeypatch.setattr(keyrate, "optimize_params", linear_optimum)


def test_threshold_sweep(cheap_optimizer, key_preset):
    result = keyrate.threshold_sweep(key_preset, [0.75, 0.85, 0.90, 0.95], verbose=False)
    assert result.rates[0] == -np.inf
    assert result.best_params[0] is None
    assert result.rates[2] == pytest.approx(0.90 - THRESHOLD)
    assert THRESHOLD < result.threshold <= THRESHOLD + 1e-3
    assert result.bisection
    frame = result.to_frame()
    assert list(frame.columns) == ["eta", "rate", "stage"]
    assert len(frame) == 4 + len(result.bisection)
    assert frame["eta"].is_monotonic_increasing
    d = result.to_dict()
    assert d["threshold"] == result.threshold
    assert d["rates"][0] is None
    assert d["rates"][2] == pytest.approx(0.90 - THRESHOLD)
    # Strict JSON: failed points must not leak -inf
    json.dumps(utils.to_jsonable(d), allow_nan=False)


def test_threshold_sweep_edges(cheap_optimizer, key_preset):
    assert keyrate.threshold_sweep(key_preset, [0.9, 0.95], verbose=False).threshold == 0.9
    assert keyrate.threshold_sweep(key_preset, [0.8, 0.85], verbose=False).threshold is None
    with pytest.raises(ConfigError):
        keyrate.threshold_sweep(key_preset, [0.9, 0.8], verbose=False)


def test_asymmetric_efficiency_scaling(key_preset):
    scaled = keyrate._eta_model(key_preset, 0.8, symmetric=False)
    assert max(scaled.eta_a, scaled.eta_b) == pytest.approx(0.8)
    assert scaled.eta_a / scaled.eta_b == pytest.approx(key_preset.eta_a / key_preset.eta_b)


def test_plot_sweep(cheap_optimizer, key_preset, tmp_path):
    result = keyrate.threshold_sweep(key_preset, [0.85, 0.90], verbose=False)
    path = tmp_path / "sweep.png"
    ax = keyrate.plot_sweep(result, path)
    assert path.exists()
    assert ax.get_xlabel() == "Detection efficiency"


# Fiber analyses


def fixed_entropy(behavior, preprocess_params, **kwargs):
    stats = preprocess.process(behavior.key_distribution(), preprocess_params)
    eb = SimpleNamespace(bound=0.6, dual_functional=BellFunctional(0.0, {(0, 0, 1, 1): 3.15}))
    return keyrate.KeyRateReport(
        rate=keyrate.dw_rate(stats, eb),
        p_v=stats.p_v,
        entropy_bound=eb,
        ec_cost=stats.ec_cost,
        f_e=1.0,
        params={"p": preprocess_params.p, "p_n": preprocess_params.p_n},
    )


def test_analyze_fibers(monkeypatch):
    monkeypatch.setattr(keyrate, "rate_from_behavior", fixed_entropy)
    summary, reports = keyrate.analyze_fibers(verbose=False)
    assert list(summary["fiber_m"]) == [20, 80, 220]
    assert not summary["raised_exception"].any()
    row = summary.set_index("fiber_m").loc[20]
    assert row["p"] == pytest.approx(0.96)
    assert row["p_v"] == pytest.approx(P_V_20M, abs=1e-3)
    # 6 settings x 2.4e8 rounds
    assert row["delta"] == pytest.approx(row["published_delta"], rel=2e-2)
    assert reports[20].params["dataset"] == "20 m"


def test_analyze_fibers_captures_failures(monkeypatch):
    def failing(*args, **kwargs):
        raise SolverFailure("no certificate")

    monkeypatch.setattr(keyrate, "rate_from_behavior", failing)
    summary, reports = keyrate.analyze_fibers(verbose=False)
    assert summary["raised_exception"].all()
    assert summary["rate"].isna().all()
    assert all(r is None for r in reports.values())


@pytest.mark.slow
def test_published_20m_rate():
    summary, _ = keyrate.analyze_fibers(verbose=False)
    row = summary.set_index("fiber_m").loc[20]
    assert row["rate"] == pytest.approx(2.33e-4, abs=0.3e-4)


@pytest.mark.slow
def test_optimized_rate_at_published_efficiency(key_preset):
    template = key_preset.replace(eta_a=0.875, eta_b=0.875)
    _, report = keyrate.optimize_params(
        template,
        preprocess_template=PreprocessParams(p=0.96, p_n=0.13),
        optimizer_params={"popsize": 5, "maxiter": 3, "polish_maxiter": 0},
    )
    assert report.rate > 0
    assert 2.33e-4 / 2 <= report.rate <= 2 * 2.33e-4
