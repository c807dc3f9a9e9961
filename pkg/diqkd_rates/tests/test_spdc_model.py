import itertools
import json

import numpy as np
import numpy.testing as npt
import pytest

from diqkd_rates import correlations, spdc_model, utils
from diqkd_rates.exceptions import ConfigError


def test_fidelity_to_visibility():
    assert spdc_model.fidelity_to_visibility(1.0) == pytest.approx(1.0)
    assert spdc_model.fidelity_to_visibility(0.25) == pytest.approx(0.0)
    assert spdc_model.fidelity_to_visibility(0.9952) == pytest.approx(0.9936)
    with pytest.raises(ConfigError):
        spdc_model.fidelity_to_visibility(0.2)


def test_hwp_to_bloch():
    assert spdc_model.hwp_to_bloch(45.0) == pytest.approx(np.pi / 2)
    assert spdc_model.hwp_to_bloch(45.0, factor=4.0) == pytest.approx(np.pi)


@pytest.mark.parametrize("r, V", [(1.0, 1.0), (0.36, 0.99), (0.0, 0.5)])
def test_werner_state(r, V):
    rho = spdc_model.werner_state(r, V)
    assert np.trace(rho).real == pytest.approx(1.0)
    npt.assert_allclose(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() > -1e-12
    assert spdc_model.state_fidelity(rho, r) == pytest.approx(V + (1 - V) / 4)


def test_werner_state_rejects_bad_params():
    with pytest.raises(ConfigError):
        spdc_model.werner_state(1.2, 1.0)


def test_werner_state_psd_check(monkeypatch):
    monkeypatch.setattr(spdc_model, "PSD_FLOOR", 1.0)
    with pytest.raises(ConfigError, match="not PSD"):
        spdc_model.werner_state(0.5, 0.9)


def test_measurement_effect_is_bounded():
    m = spdc_model.measurement_effect(0.3, 0.8, 1e-3)
    eig = np.linalg.eigvalsh(m)
    assert eig.min() >= 0
    assert eig.max() <= 1
    # Lossless dark-count-free effect is a rank-1 projector
    p = spdc_model.measurement_effect(0.3, 1.0, 0.0)
    npt.assert_allclose(p @ p, p, atol=1e-12)


def test_zero_pair_probs():
    npt.assert_allclose(spdc_model.zero_pair_probs(0.0), [0, 0, 0, 1])
    assert spdc_model.zero_pair_probs(0.1).sum() == pytest.approx(1.0)


def test_multipair_combine_click_dominates():
    e = np.eye(4)
    npt.assert_allclose(spdc_model.multipair_combine(e[3], e[3]), e[3])
    npt.assert_allclose(spdc_model.multipair_combine(e[0], e[3]), e[0])
    # Alice clicks on the first pair, Bob on the second
    npt.assert_allclose(spdc_model.multipair_combine(e[1], e[2]), e[0])
    q = np.array([0.1, 0.2, 0.3, 0.4])
    assert spdc_model.multipair_combine(q, q).sum() == pytest.approx(1.0)


def test_poisson_truncation():
    weights = spdc_model.poisson_weights(0.04, 3)
    assert weights.sum() < 1
    deficit = spdc_model.truncation_deficit(0.04, 3)
    assert 0 < deficit < 2e-7
    assert deficit == pytest.approx(1 - weights.sum())


def test_behavior_from_model_is_no_signaling(key_preset):
    b = spdc_model.behavior_from_model(key_preset)
    npt.assert_allclose(b.p.sum(axis=(0, 1)), 1.0, atol=1e-12)
    assert correlations.no_signaling_residual(b) < 1e-12


def test_no_pairs_no_dark_counts_never_click(ideal_params):
    b = spdc_model.behavior_from_model(ideal_params.replace(u=0.0))
    npt.assert_allclose(b.p[1, 1], 1.0)


def test_ideal_key_outcomes_anticorrelated(ideal_behavior):
    key = ideal_behavior.key_distribution()
    assert key[1] + key[2] == pytest.approx(1.0)
    assert key[1] == pytest.approx(0.5)


def test_presets():
    key = spdc_model.load_preset("key")
    assert key.V == pytest.approx(0.9936)
    assert key.u == pytest.approx(0.04)
    assert key.angles_a[0] == pytest.approx(np.deg2rad(-174.2567))
    assert key.angles_b[2] == pytest.approx(np.deg2rad(-1.3712))
    assert key.max_pairs == 3
    chsh = spdc_model.load_preset("chsh")
    assert chsh.u == pytest.approx(0.62)
    assert chsh.angles_a[0] == pytest.approx(np.deg2rad(2 * -81.09))
    assert chsh.max_pairs == 8
    with pytest.raises(ConfigError, match="Unknown preset"):
        spdc_model.load_preset("bb84")


def test_params_dict_roundtrip(key_preset):
    back = spdc_model.spdc_params_from_dict(spdc_model.spdc_params_to_dict(key_preset))
    assert back.V == pytest.approx(key_preset.V)
    npt.assert_allclose(back.angles_b, key_preset.angles_b)


def test_params_dict_errors(key_preset):
    d = spdc_model.spdc_params_to_dict(key_preset)
    del d["eta_a"]
    with pytest.raises(ConfigError, match="missing field"):
        spdc_model.spdc_params_from_dict(d)
    d = spdc_model.spdc_params_to_dict(key_preset)
    d["eta"] = 0.9
    with pytest.raises(ConfigError, match="Unrecognized"):
        spdc_model.spdc_params_from_dict(d)


def test_params_validation(key_preset):
    with pytest.raises(ConfigError):
        key_preset.replace(eta_a=1.5)
    with pytest.raises(ConfigError):
        key_preset.replace(angles_b=(0.0, 0.1))
    with pytest.raises(ConfigError):
        key_preset.replace(max_pairs=0)


def combined_outcome(i, j):
    """Outcome index of two pairs' outcomes i, j: a party clicks (0) if either pair clicks."""
    a1, b1 = correlations.OUTCOME_PAIRS[i]
    a2, b2 = correlations.OUTCOME_PAIRS[j]
    return correlations.OUTCOME_PAIRS.index((a1 * a2, b1 * b2))


def test_beta_matches_click_rule():
    for i, j in itertools.product(range(4), repeat=2):
        expected = np.zeros(4)
        expected[combined_outcome(i, j)] = 1
        npt.assert_array_equal(spdc_model.BETA.beta[:, i, j], expected)


def test_multipair_combine_is_associative():
    rng = np.random.default_rng(7)
    p, q, s = rng.dirichlet(np.ones(4), size=3)
    left = spdc_model.multipair_combine(spdc_model.multipair_combine(p, q), s)
    right = spdc_model.multipair_combine(p, spdc_model.multipair_combine(q, s))
    npt.assert_allclose(left, right, atol=1e-15)
    npt.assert_allclose(spdc_model.multipair_combine(p, q), spdc_model.multipair_combine(q, p), atol=1e-15)


def enumerated_mixture(params, x, y):
    """Outcome 4-vector by enumerating pair numbers and every per-pair outcome."""
    weights = spdc_model.poisson_weights(params.u, params.max_pairs)
    single = spdc_model.single_pair_probs(params, x, y)
    total = weights[0] * spdc_model.zero_pair_probs(params.p_d)
    for n in range(1, params.max_pairs + 1):
        for outcomes in itertools.product(range(4), repeat=n):
            k = outcomes[0]
            for j in outcomes[1:]:
                k = combined_outcome(k, j)
            total[k] += weights[n] * np.prod(single[list(outcomes)])
    return total / weights.sum()


@pytest.mark.parametrize("max_pairs", [1, 2])
def test_multipair_mixture_enumeration(key_preset, max_pairs):
    params = key_preset.replace(u=0.5, p_d=1e-3, max_pairs=max_pairs)
    b = spdc_model.behavior_from_model(params)
    for x, y in correlations.DEFAULT_SCENARIO.settings:
        npt.assert_allclose(b.setting_vector(x, y), enumerated_mixture(params, x, y), atol=1e-12)


def test_click_probability_grows_with_efficiency(key_preset):
    clicks = []
    for eta in np.linspace(0.5, 1.0, 6):
        b = spdc_model.behavior_from_model(key_preset.replace(eta_a=eta))
        clicks.append(correlations.marginals(b).alice[0, 0])
    assert np.all(np.diff(clicks) > 0)


def test_key_preset_matches_projected_20m(key_preset, projected_behaviors):
    model = spdc_model.behavior_from_model(key_preset)
    npt.assert_allclose(model.p, projected_behaviors[20].p, atol=1e-3)


def test_chsh_preset_score():
    chsh = spdc_model.load_preset("chsh")
    assert correlations.chsh_score(spdc_model.behavior_from_model(chsh)) == pytest.approx(0.7559, abs=2e-3)


def test_hwp_factor_resolution():
    # The printed plate angles reproduce the CHSH score only with a factor of 2
    with open(utils.data_path("chsh_config.json")) as f:
        config = json.load(f)
    scores = {}
    for factor in [2.0, 4.0]:
        params = spdc_model.spdc_params_from_dict(dict(config, hwp_factor=factor))
        scores[factor] = correlations.chsh_score(spdc_model.behavior_from_model(params))
    assert scores[2.0] == pytest.approx(0.7559, abs=2e-3)
    assert scores[4.0] < 0.75
