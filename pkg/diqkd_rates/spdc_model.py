"""
Behavior of an SPDC polarization-entanglement source with lossy detection.

Model:
    - Werner state rho = V |psi_r><psi_r| + (1 - V) I/4 with
      |psi_r> = (|HV> + r |VH>) / sqrt(1 + r^2)
    - Click effect of a station measuring in the x-z plane of the Bloch sphere
      at angle phi, with efficiency eta and dark-count probability p_d:
      M_0 = [1 - (1 - p_d)(1 - eta)] (I + Pi(phi))/2 + p_d (I - Pi(phi))/2,
      Pi(phi) = cos(phi) sigma_z + sin(phi) sigma_x
    - Poissonian number of pairs per pulse (mean u). Outcomes of several pairs
      combine so that a party clicks when it clicks on any pair. Zero pairs
      leave only dark counts.

Joint outcome 4-vectors are ordered ab = 00, 01, 10, 11 (0 = click).
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import factorial

from . import utils
from .correlations import Behavior, OUTCOME_PAIRS, DEFAULT_SCENARIO
from .exceptions import ConfigError

PSD_FLOOR = -1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

SPDC_FIELDS = [
    "r",
    "visibility",
    "eta_a",
    "eta_b",
    "dark_count",
    "mean_photon",
    "angles_a_deg",
    "angles_b_deg",
    "max_pairs",
]

DEFAULT_HWP_FACTOR = 2.0  # Bloch angle = factor * half-wave-plate angle

PRESETS = {
    "key": "key_config.json",  # key-generation configuration, Bloch angles fitted at 20 m
    "chsh": "chsh_config.json",  # CHSH-optimized configuration
}


@dataclass(frozen=True)
class SpdcParams:
    """Physical model parameters. Angles are Bloch angles in radians."""

    r: float
    V: float
    eta_a: float
    eta_b: float
    p_d: float
    u: float
    angles_a: tuple
    angles_b: tuple
    max_pairs: int = 3

    def __post_init__(self):
        for name in ["r", "V", "eta_a", "eta_b", "p_d"]:
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigError(f"SpdcParams.{name} must lie in [0, 1], got {value}")
        if self.u < 0:
            raise ConfigError(f"SpdcParams.u must be non-negative, got {self.u}")
        if int(self.max_pairs) != self.max_pairs or self.max_pairs < 1:
            raise ConfigError(f"SpdcParams.max_pairs must be an integer >= 1, got {self.max_pairs}")
        object.__setattr__(self, "max_pairs", int(self.max_pairs))
        object.__setattr__(self, "angles_a", tuple(float(a) for a in self.angles_a))
        object.__setattr__(self, "angles_b", tuple(float(a) for a in self.angles_b))
        if len(self.angles_a) != 2 or len(self.angles_b) != 3:
            raise ConfigError("SpdcParams needs 2 angles for Alice and 3 for Bob")

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class BetaTensor:
    """beta[k][i, j] = 1 when pair outcomes i and j combine into outcome k."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=int)
        assert beta.shape == (4, 4, 4), f"Expected shape (4, 4, 4), got {beta.shape}"
        assert np.all((beta == 0) | (beta == 1)), "beta entries must be 0/1"
        assert np.all(beta.sum(axis=0) == 1), "beta matrices must partition the 16 (i, j) pairs"
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)


# Rows index the first pair's outcome, columns the second's
BETA = BetaTensor(
    np.array(
        [
            [[1, 1, 1, 1], [1, 0, 1, 0], [1, 1, 0, 0], [1, 0, 0, 0]],
            [[0, 0, 0, 0], [0, 1, 0, 1], [0, 0, 0, 0], [0, 1, 0, 0]],
            [[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 1, 1], [0, 0, 1, 0]],
            [[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 1]],
        ]
    )
)


def fidelity_to_visibility(F):
    if not 0.25 <= F <= 1:
        raise ConfigError(f"Fidelity must lie in [0.25, 1], got {F}")
    return (4 * F - 1) / 3


def hwp_to_bloch(theta_deg, factor=DEFAULT_HWP_FACTOR):
    """Bloch angle (radians) of a measurement set by a half-wave plate at theta_deg."""
    return np.deg2rad(factor * np.asarray(theta_deg, dtype=float))


def target_state(r):
    psi = np.zeros(4, dtype=complex)
    psi[1] = 1.0  # |HV>
    psi[2] = r  # |VH>
    return psi / np.sqrt(1 + r**2)


def werner_state(r, V):
    if not 0 <= r <= 1 or not 0 <= V <= 1:
        raise ConfigError(f"werner_state needs r, V in [0, 1], got r={r}, V={V}")
    psi = target_state(r)
    rho = V * np.outer(psi, psi.conj()) + (1 - V) * np.eye(4) / 4
    min_eig = np.linalg.eigvalsh(rho).min()
    if min_eig < PSD_FLOOR:
        raise ConfigError(f"Werner state is not PSD (min eigenvalue {min_eig})")
    return rho


def state_fidelity(rho, r):
    psi = target_state(r)
    return float(np.real(psi.conj() @ rho @ psi))


def measurement_effect(phi, eta, p_d):
    """Click effect M_0 (2x2). The no-click effect is I - M_0."""
    if not 0 <= eta <= 1 or not 0 <= p_d <= 1:
        raise ConfigError(f"measurement_effect needs eta, p_d in [0, 1], got {eta}, {p_d}")
    proj = (ID2 + np.cos(phi) * SIGMA_Z + np.sin(phi) * SIGMA_X) / 2
    return (1 - (1 - p_d) * (1 - eta)) * proj + p_d * (ID2 - proj)


def single_pair_probs(params, x, y, rho=None):
    """Outcome 4-vector (ab = 00, 01, 10, 11) of one pair at setting (x, y), 1-based."""
    if rho is None:
        rho = werner_state(params.r, params.V)
    m_a = measurement_effect(params.angles_a[x - 1], params.eta_a, params.p_d)
    m_b = measurement_effect(params.angles_b[y - 1], params.eta_b, params.p_d)
    effects_a = (m_a, ID2 - m_a)
    effects_b = (m_b, ID2 - m_b)
    probs = np.array(
        [np.real(np.trace(rho @ np.kron(effects_a[a], effects_b[b]))) for a, b in OUTCOME_PAIRS]
    )
    return np.clip(probs, 0.0, None) / np.clip(probs, 0.0, None).sum()


def zero_pair_probs(p_d):
    return np.array([p_d**2, p_d * (1 - p_d), p_d * (1 - p_d), (1 - p_d) ** 2])


def multipair_combine(p, q, beta=BETA):
    """output_k = sum_ij beta[k][i, j] p_i q_j."""
    return np.einsum("kij,i,j->k", beta.beta, np.asarray(p), np.asarray(q))


def poisson_weights(u, max_pairs):
    n = np.arange(max_pairs + 1)
    return np.exp(-u) * u**n / factorial(n)


def _setting_mixture(single, p_d, weights):
    n_pairs_probs = [zero_pair_probs(p_d), single]
    for _ in range(2, len(weights)):
        n_pairs_probs.append(multipair_combine(n_pairs_probs[-1], single))
    mixture = sum(w * probs for w, probs in zip(weights, n_pairs_probs))
    return mixture / weights.sum()


def behavior_from_model(params):
    """Poisson mixture over 0..max_pairs pairs, renormalized by the truncated weight."""
    rho = werner_state(params.r, params.V)
    weights = poisson_weights(params.u, params.max_pairs)
    vectors = {
        (x, y): _setting_mixture(single_pair_probs(params, x, y, rho), params.p_d, weights)
        for x, y in DEFAULT_SCENARIO.settings
    }
    return Behavior.from_setting_vectors(vectors)


def truncation_deficit(u, max_pairs):
    """Poisson tail mass P(n > max_pairs) dropped by the truncation."""
    return float(1 - poisson_weights(u, max_pairs).sum())


def single_pair_behavior(params):
    """Behavior of exactly one emitted pair per round."""
    rho = werner_state(params.r, params.V)
    vectors = {
        (x, y): single_pair_probs(params, x, y, rho) for x, y in DEFAULT_SCENARIO.settings
    }
    return Behavior.from_setting_vectors(vectors)


def spdc_params_from_dict(d):
    """Parse the SpdcParams JSON layout (angles in degrees).

    Accepts `fidelity` instead of `visibility`, and half-wave-plate angles
    `hwp_a_deg`/`hwp_b_deg` (with optional `hwp_factor`) instead of Bloch
    angles `angles_a_deg`/`angles_b_deg`.
    """
    d = dict(d)
    if "visibility" not in d and "fidelity" in d:
        d["visibility"] = fidelity_to_visibility(d.pop("fidelity"))
    else:
        d.pop("fidelity", None)
    factor = d.pop("hwp_factor", DEFAULT_HWP_FACTOR)
    for side in ["a", "b"]:
        hwp = d.pop(f"hwp_{side}_deg", None)
        if f"angles_{side}_deg" not in d and hwp is not None:
            d[f"angles_{side}_deg"] = list(factor * np.asarray(hwp, dtype=float))
    d.setdefault("max_pairs", 3)
    missing = [f for f in SPDC_FIELDS if f not in d]
    if missing:
        raise ConfigError(f"SpdcParams JSON is missing field(s): {missing}")
    unrecognized = set(d) - set(SPDC_FIELDS)
    if unrecognized:
        raise ConfigError(
            f"Unrecognized SpdcParams fields: {unrecognized}.\n\n"
            f"Recognized fields: {SPDC_FIELDS}"
        )
    try:
        return SpdcParams(
            r=float(d["r"]),
            V=float(d["visibility"]),
            eta_a=float(d["eta_a"]),
            eta_b=float(d["eta_b"]),
            p_d=float(d["dark_count"]),
            u=float(d["mean_photon"]),
            angles_a=tuple(np.deg2rad(d["angles_a_deg"])),
            angles_b=tuple(np.deg2rad(d["angles_b_deg"])),
            max_pairs=d["max_pairs"],
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Malformed SpdcParams JSON: {e}")


def spdc_params_to_dict(params):
    return {
        "r": params.r,
        "visibility": params.V,
        "eta_a": params.eta_a,
        "eta_b": params.eta_b,
        "dark_count": params.p_d,
        "mean_photon": params.u,
        "angles_a_deg": list(np.rad2deg(params.angles_a)),
        "angles_b_deg": list(np.rad2deg(params.angles_b)),
        "max_pairs": params.max_pairs,
    }


def load_preset(name):
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}'. Available: {list(PRESETS)}")
    return spdc_params_from_dict(utils.read_json(utils.data_path(PRESETS[name])))
