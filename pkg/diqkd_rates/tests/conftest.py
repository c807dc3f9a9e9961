import numpy as np
import pytest

from diqkd_rates import correlations, spdc_model, utils


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: large relaxations, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="need --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def count_table():
    return correlations.read_count_table(utils.data_path("fiber_counts.csv"))


@pytest.fixture(scope="session")
def projected_behaviors():
    return correlations.read_projected_table(utils.data_path("fiber_projected.csv"))


@pytest.fixture(scope="session")
def key_preset():
    return spdc_model.load_preset("key")


@pytest.fixture(scope="session")
def ideal_params():
    """Maximally entangled pair, perfect detectors, maximal CHSH violation on (x, y) in {1,2}x{1,2}."""
    return spdc_model.SpdcParams(
        r=1.0,
        V=1.0,
        eta_a=1.0,
        eta_b=1.0,
        p_d=0.0,
        u=0.1,
        angles_a=(0.0, np.pi / 2),
        angles_b=(-np.pi / 4, np.pi / 4, 0.0),
    )


@pytest.fixture(scope="session")
def ideal_behavior(ideal_params):
    return spdc_model.single_pair_behavior(ideal_params)


@pytest.fixture(scope="session")
def noisy_behavior(ideal_behavior):
    """Ideal correlations with 3% white noise, an interior point of the quantum set."""
    return correlations.mix_behaviors(ideal_behavior, correlations.uniform_behavior(), 0.97)
