import numpy as np
import numpy.testing as npt
import pytest

from diqkd_rates import preprocess, utils
from diqkd_rates.exceptions import ConfigError, DegenerateDistributionError

CORRELATED = np.array([0.5, 0.0, 0.0, 0.5])
ANTICORRELATED = np.array([0.0, 0.5, 0.5, 0.0])


def test_params_validation():
    preprocess.PreprocessParams(p=0.0, p_n=0.5)
    with pytest.raises(ConfigError):
        preprocess.PreprocessParams(p=1.1)
    with pytest.raises(ConfigError):
        preprocess.PreprocessParams(p_n=0.6)


def test_no_postselection_keeps_everything():
    assert preprocess.retention_probability(ANTICORRELATED, 1.0) == pytest.approx(1.0)
    npt.assert_allclose(preprocess.postselect(ANTICORRELATED, 1.0), ANTICORRELATED)


def test_postselection_weights():
    npt.assert_allclose(preprocess.selection_weights(0.5), [1.0, 0.5, 0.5, 0.25])
    dist = np.array([0.1, 0.2, 0.3, 0.4])
    assert preprocess.retention_probability(dist, 0.5) == pytest.approx(0.1 + 0.1 + 0.15 + 0.1)
    tilde = preprocess.postselect(dist, 0.5)
    npt.assert_allclose(tilde, np.array([0.1, 0.1, 0.15, 0.1]) / 0.45)


def test_postselection_discards_no_clicks():
    npt.assert_allclose(preprocess.postselect(CORRELATED, 0.0), [1, 0, 0, 0])


def test_postselection_degenerate():
    with pytest.raises(DegenerateDistributionError):
        preprocess.postselect([0.0, 0.0, 0.0, 1.0], 0.0)


def test_invalid_distribution():
    with pytest.raises(ValueError):
        preprocess.postselect([0.5, 0.5, 0.5, 0.0], 1.0)


def test_noisy_flip():
    npt.assert_allclose(preprocess.noisy_flip([1, 0, 0, 0], 0.5), [0.5, 0, 0.5, 0])
    npt.assert_allclose(preprocess.noisy_flip(CORRELATED, 0.0), CORRELATED)
    npt.assert_allclose(preprocess.noisy_flip(CORRELATED, 0.1), [0.45, 0.05, 0.05, 0.45])


def test_ec_cost():
    assert preprocess.ec_cost(CORRELATED) == pytest.approx(0.0, abs=1e-12)
    assert preprocess.ec_cost(np.full(4, 0.25)) == pytest.approx(1.0)
    hat = preprocess.noisy_flip(CORRELATED, 0.1)
    assert preprocess.ec_cost(hat) == pytest.approx(utils.binary_entropy(0.1))


def test_process(projected_behaviors):
    key = projected_behaviors[20].key_distribution()
    stats = preprocess.process(key, preprocess.PreprocessParams(p=0.96, p_n=0.13))
    assert 0 < stats.p_v < 1
    assert stats.hat_p.sum() == pytest.approx(1.0)
    assert stats.ec_cost > preprocess.raw_error_correction_cost(key)
    assert set(stats.to_dict()) == {"p_v", "tilde_p", "hat_p", "ec_cost"}


def test_published_20m_statistics(projected_behaviors):
    key = projected_behaviors[20].key_distribution()
    stats = preprocess.process(key, preprocess.PreprocessParams(p=0.96, p_n=0.13))
    assert stats.p_v == pytest.approx(0.92194, abs=1e-5)
    assert stats.tilde_p[3] == pytest.approx(0.99459, abs=1e-5)
    assert stats.ec_cost == pytest.approx(0.55995, abs=1e-4)


def test_heavy_mixing_220m(projected_behaviors):
    key = projected_behaviors[220].key_distribution()
    stats = preprocess.process(key, preprocess.PreprocessParams(p=0.99, p_n=0.49))
    assert stats.ec_cost > 0.99
