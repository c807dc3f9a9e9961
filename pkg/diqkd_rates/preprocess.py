"""Random post-selection, noisy preprocessing and one-way error-correction cost.

All distributions are key-basis 4-vectors over ab = 00, 01, 10, 11.
"""
from dataclasses import dataclass

import numpy as np

from .correlations import NORMALIZATION_ATOL
from .exceptions import ConfigError, DegenerateDistributionError
from .utils import shannon_term

# Index of (a XOR 1, b) for each entry of a 4-vector
ALICE_FLIP = [2, 3, 0, 1]


@dataclass(frozen=True)
class PreprocessParams:
    p: float = 1.0  # probability to keep a no-click (outcome 1) key bit
    p_n: float = 0.0  # probability Alice flips a kept bit

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ConfigError(f"Post-selection probability p must lie in [0, 1], got {self.p}")
        if not 0 <= self.p_n <= 0.5:
            raise ConfigError(f"Flip probability p_n must lie in [0, 0.5], got {self.p_n}")


@dataclass(frozen=True)
class ProcessedStats:
    p_v: float
    tilde_p: np.ndarray
    hat_p: np.ndarray
    ec_cost: float

    def to_dict(self):
        return {
            "p_v": self.p_v,
            "tilde_p": list(self.tilde_p),
            "hat_p": list(self.hat_p),
            "ec_cost": self.ec_cost,
        }


def _check_distribution(dist):
    dist = np.asarray(dist, dtype=float)
    assert dist.shape == (4,), f"Expected a key-basis 4-vector, got shape {dist.shape}"
    if np.any(dist < 0) or abs(dist.sum() - 1) > NORMALIZATION_ATOL:
        raise ValueError(f"Not a probability 4-vector: {dist}")
    return dist


def selection_weights(p):
    """omega_ab = p_a p_b with p_0 = 1, p_1 = p."""
    return np.array([1.0, p, p, p**2])


def retention_probability(key_dist, p):
    key_dist = _check_distribution(key_dist)
    return float(selection_weights(p) @ key_dist)


def postselect(key_dist, p):
    key_dist = _check_distribution(key_dist)
    weighted = selection_weights(p) * key_dist
    p_v = weighted.sum()
    if p_v <= 0:
        raise DegenerateDistributionError()
    return weighted / p_v


def noisy_flip(dist, p_n):
    dist = _check_distribution(dist)
    return (1 - p_n) * dist + p_n * dist[ALICE_FLIP]


def ec_cost(hat_dist):
    """H(A|B) in bits for a key-basis 4-vector."""
    hat_dist = _check_distribution(hat_dist)
    bob = hat_dist[[0, 1]] + hat_dist[[2, 3]]
    value = float(shannon_term(hat_dist).sum() - shannon_term(bob).sum())
    return min(max(value, 0.0), 1.0)


def process(key_dist, params):
    p_v = retention_probability(key_dist, params.p)
    tilde_p = postselect(key_dist, params.p)
    hat_p = noisy_flip(tilde_p, params.p_n)
    return ProcessedStats(p_v=p_v, tilde_p=tilde_p, hat_p=hat_p, ec_cost=ec_cost(hat_p))


def raw_error_correction_cost(key_dist):
    return ec_cost(key_dist)
