"""Bell scenario, Behavior type and derived statistics.

The scenario is Alice with two binary inputs and Bob with three, binary
outcomes, outcome 0 meaning a detector click. Inputs are 1-based at every
public boundary (function arguments, JSON keys, CSV columns) and 0-based in
the stored tensors, which are indexed ``p[a, b, x, y]``.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import pandas as pd

from .exceptions import IngestionError, ReconstructionError

NORMALIZATION_ATOL = 1e-12
PROBABILITY_ATOL = 1e-9  # entries this far outside [0, 1] are clipped, beyond that rejected

# Order of 4-vectors over joint outcomes (a, b)
OUTCOME_PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1))

COUNT_COLUMNS = ["fiber_m", "mean_photon", "x", "y", "n11", "n10", "n01", "n00"]
# count column -> (a, b)
COUNT_OUTCOMES = {"n11": (1, 1), "n10": (1, 0), "n01": (0, 1), "n00": (0, 0)}
PROJECTED_COLUMNS = ["fiber_m", "x", "y", "p11", "p10", "p01", "p00"]


@dataclass(frozen=True)
class Scenario:
    n_inputs_a: int = 2
    n_inputs_b: int = 3
    n_outcomes: int = 2
    key_input_a: int = 1
    key_input_b: int = 3
    input_distribution: tuple = None  # P(x, y) as nested tuples [x][y]; uniform if None

    def __post_init__(self):
        if (self.n_inputs_a, self.n_inputs_b, self.n_outcomes) != (2, 3, 2):
            raise ValueError("Only the 2x3-input binary-outcome scenario is supported.")
        if not 1 <= self.key_input_a <= self.n_inputs_a:
            raise ValueError(f"Invalid key input for Alice: {self.key_input_a}")
        if not 1 <= self.key_input_b <= self.n_inputs_b:
            raise ValueError(f"Invalid key input for Bob: {self.key_input_b}")
        if self.input_distribution is None:
            dist = np.full((self.n_inputs_a, self.n_inputs_b), 1 / 6)
        else:
            dist = np.asarray(self.input_distribution, dtype=float)
        if dist.shape != (self.n_inputs_a, self.n_inputs_b) or np.any(dist < 0):
            raise ValueError(f"Invalid input distribution: {self.input_distribution}")
        if abs(dist.sum() - 1) > NORMALIZATION_ATOL:
            raise ValueError(f"Input distribution sums to {dist.sum()}, not 1.")
        object.__setattr__(self, "input_distribution", tuple(map(tuple, dist)))

    def setting_probability(self, x, y):
        return self.input_distribution[x - 1][y - 1]

    @property
    def settings(self):
        """All (x, y) pairs, 1-based, x-major."""
        return list(product(range(1, self.n_inputs_a + 1), range(1, self.n_inputs_b + 1)))


DEFAULT_SCENARIO = Scenario()


class Behavior(object):
    """Conditional distribution P(a,b|x,y) of the 2x3 binary scenario.

    Args:
        p (array-like): Tensor of shape (2, 2, 2, 3) indexed [a, b, x, y]
            with 0-based x and y.

    Kwargs:
        normalize (bool): Clip entries within PROBABILITY_ATOL of [0, 1] and
            renormalize each setting. Use for solver output and printed
            tables rounded to finitely many digits. (default False)
    """

    shape = (2, 2, 2, 3)

    def __init__(self, p, normalize=False):
        p = np.array(p, dtype=float)
        if p.shape != self.shape:
            raise ValueError(f"Behavior tensor must have shape {self.shape}, got {p.shape}")
        if np.any(p < -PROBABILITY_ATOL) or np.any(p > 1 + PROBABILITY_ATOL):
            raise ValueError("Behavior entries must lie in [0, 1].")
        if normalize:
            p = np.clip(p, 0.0, 1.0)
            p = p / p.sum(axis=(0, 1), keepdims=True)
        elif np.any(p < 0) or np.any(p > 1):
            raise ValueError("Behavior entries must lie in [0, 1].")
        sums = p.sum(axis=(0, 1))
        if np.any(np.abs(sums - 1) > NORMALIZATION_ATOL):
            x, y = np.unravel_index(np.argmax(np.abs(sums - 1)), sums.shape)
            raise ValueError(
                f"P(.,.|x={x + 1},y={y + 1}) sums to {sums[x, y]!r}, not 1."
            )
        p.setflags(write=False)
        self._p = p

    @property
    def p(self):
        return self._p

    def prob(self, a, b, x, y):
        return float(self._p[a, b, x - 1, y - 1])

    def setting_vector(self, x, y):
        """4-vector over OUTCOME_PAIRS at setting (x, y)."""
        return np.array([self._p[a, b, x - 1, y - 1] for a, b in OUTCOME_PAIRS])

    def key_distribution(self, scenario=DEFAULT_SCENARIO):
        return self.setting_vector(scenario.key_input_a, scenario.key_input_b)

    @classmethod
    def from_setting_vectors(cls, vectors, normalize=False):
        """Build from {(x, y): 4-vector over OUTCOME_PAIRS}."""
        p = np.zeros(cls.shape)
        for (x, y), vec in vectors.items():
            for (a, b), value in zip(OUTCOME_PAIRS, vec):
                p[a, b, x - 1, y - 1] = value
        return cls(p, normalize=normalize)

    def as_frame(self):
        return pd.DataFrame(
            [
                {"x": x, "y": y, "a": a, "b": b, "p": self.prob(a, b, x, y)}
                for x, y in DEFAULT_SCENARIO.settings
                for a, b in OUTCOME_PAIRS
            ]
        )

    def __repr__(self):
        return f"Behavior(key={np.round(self.key_distribution(), 6).tolist()})"


@dataclass(frozen=True)
class CollinsGisinVector:
    """h1,h2 = P_A(1|x); h3..h5 = P_B(1|y); h6..h11 = P(1,1|x,y), x-major."""

    h: tuple = field(default_factory=tuple)

    def __post_init__(self):
        h = tuple(float(v) for v in self.h)
        if len(h) != 11:
            raise ValueError(f"Collins-Gisin vector has 11 entries, got {len(h)}")
        if any(v < -PROBABILITY_ATOL or v > 1 + PROBABILITY_ATOL for v in h):
            raise ReconstructionError(f"Collins-Gisin entries must lie in [0, 1]: {h}")
        object.__setattr__(self, "h", h)

    def as_array(self):
        return np.array(self.h)


@dataclass(frozen=True)
class EventRecord:
    x: int
    y: int
    a: int
    b: int

    def __post_init__(self):
        if self.x not in (1, 2) or self.y not in (1, 2, 3):
            raise IngestionError(f"Input index out of range in event {self}")
        if self.a not in (0, 1) or self.b not in (0, 1):
            raise IngestionError(f"Outcome out of range in event {self}")


@dataclass(frozen=True)
class Marginals:
    alice: np.ndarray  # P_A(a|x), [a, x], averaged over y
    bob: np.ndarray  # P_B(b|y), [b, y], averaged over x
    alice_discrepancy: float  # max over (a, x) of the spread across y
    bob_discrepancy: float

    @property
    def discrepancy(self):
        return max(self.alice_discrepancy, self.bob_discrepancy)


def from_counts(counts, rounds_per_setting):
    """Relative frequencies N_{abxy} / N_{xy}.

    Args:
        counts (array-like): Integer tensor [a, b, x, y] (0-based x, y).
        rounds_per_setting (array-like): Integer table [x, y].
    """
    counts = np.asarray(counts)
    rounds = np.asarray(rounds_per_setting)
    if counts.shape != Behavior.shape or rounds.shape != Behavior.shape[2:]:
        raise IngestionError(
            f"Count tensor must have shape {Behavior.shape} and rounds {Behavior.shape[2:]}"
        )
    if not np.issubdtype(counts.dtype, np.integer):
        if np.any(counts != np.round(counts)):
            raise IngestionError("Counts must be integers.")
        counts = counts.astype(np.int64)
    rounds = rounds.astype(np.int64)
    if np.any(counts < 0):
        raise IngestionError("Counts must be non-negative.")
    sums = counts.sum(axis=(0, 1))
    for x, y in DEFAULT_SCENARIO.settings:
        if sums[x - 1, y - 1] != rounds[x - 1, y - 1]:
            raise IngestionError(
                f"Counts for setting (x={x}, y={y}) sum to {sums[x - 1, y - 1]}, "
                f"declared rounds: {rounds[x - 1, y - 1]}"
            )
        if rounds[x - 1, y - 1] == 0:
            raise IngestionError(f"No rounds recorded for setting (x={x}, y={y})")
    return Behavior(counts / rounds[np.newaxis, np.newaxis, :, :])


def marginals(b):
    p = b.p
    alice_xy = p.sum(axis=1)  # [a, x, y]
    bob_xy = p.sum(axis=0)  # [b, x, y]
    return Marginals(
        alice=alice_xy.mean(axis=2),
        bob=bob_xy.mean(axis=1),
        alice_discrepancy=float(np.max(alice_xy.max(axis=2) - alice_xy.min(axis=2))),
        bob_discrepancy=float(np.max(bob_xy.max(axis=1) - bob_xy.min(axis=1))),
    )


def no_signaling_residual(b):
    return marginals(b).discrepancy


def collins_gisin(b):
    m = marginals(b)
    h = [m.alice[1, x] for x in range(2)]
    h += [m.bob[1, y] for y in range(3)]
    h += [b.p[1, 1, x, y] for x in range(2) for y in range(3)]
    return CollinsGisinVector(tuple(h))


def to_behavior(h):
    """Invert collins_gisin using normalization and no-signaling."""
    if not isinstance(h, CollinsGisinVector):
        h = CollinsGisinVector(tuple(h))
    h = h.as_array()
    pa1, pb1, p11 = h[0:2], h[2:5], h[5:11].reshape(2, 3)
    p = np.empty(Behavior.shape)
    p[1, 1] = p11
    p[1, 0] = pa1[:, np.newaxis] - p11
    p[0, 1] = pb1[np.newaxis, :] - p11
    p[0, 0] = 1 - pa1[:, np.newaxis] - pb1[np.newaxis, :] + p11
    if np.any(p < -PROBABILITY_ATOL) or np.any(p > 1 + PROBABILITY_ATOL):
        a, b_, x, y = np.unravel_index(np.argmin(np.minimum(p, 1 - p)), p.shape)
        raise ReconstructionError(
            f"Collins-Gisin vector outside the no-signaling polytope: "
            f"P({a},{b_}|{x + 1},{y + 1}) = {p[a, b_, x, y]!r}"
        )
    return Behavior(np.clip(p, 0.0, 1.0))


def chsh_score(b, which_y=(1, 2)):
    """Winning probability of the CHSH game a XOR b = k.l.

    Alice's inputs map to k = 0, 1 and `which_y` to l = 0, 1 in listed order.
    """
    if len(which_y) != 2 or len(set(which_y)) != 2 or not set(which_y) <= {1, 2, 3}:
        raise ValueError(f"which_y must select two distinct Bob inputs, got {which_y}")
    score = 0.0
    for k, x in enumerate((1, 2)):
        for l, y in enumerate(which_y):
            for a, b_ in OUTCOME_PAIRS:
                if (a ^ b_) == k * l:
                    score += b.prob(a, b_, x, y)
    return score / 4


def uniform_behavior():
    return Behavior(np.full(Behavior.shape, 0.25))


def deterministic_behavior(a_of_x, b_of_y):
    """Local deterministic point: Alice outputs a_of_x[x-1], Bob b_of_y[y-1]."""
    p = np.zeros(Behavior.shape)
    for x, y in DEFAULT_SCENARIO.settings:
        p[a_of_x[x - 1], b_of_y[y - 1], x - 1, y - 1] = 1.0
    return Behavior(p)


def mix_behaviors(b1, b2, mu):
    return Behavior(mu * b1.p + (1 - mu) * b2.p, normalize=True)


def behavior_key(a, b, x, y):
    return f"P({a},{b}|{x},{y})"


def behavior_to_dict(b):
    return {
        behavior_key(a, b_, x, y): b.prob(a, b_, x, y)
        for x, y in DEFAULT_SCENARIO.settings
        for a, b_ in OUTCOME_PAIRS
    }


def behavior_from_dict(d, normalize=False):
    p = np.zeros(Behavior.shape)
    for x, y in DEFAULT_SCENARIO.settings:
        for a, b in OUTCOME_PAIRS:
            key = behavior_key(a, b, x, y)
            if key not in d:
                raise IngestionError(f"Behavior JSON is missing the entry '{key}'")
            p[a, b, x - 1, y - 1] = float(d[key])
    try:
        return Behavior(p, normalize=normalize)
    except ValueError as e:
        raise IngestionError(f"Invalid behavior JSON: {e}")


def read_count_table(filepath_or_buffer):
    """Load a count CSV with header `fiber_m,mean_photon,x,y,n11,n10,n01,n00[,rounds]`."""
    try:
        table = pd.read_csv(filepath_or_buffer)
    except pd.errors.EmptyDataError:
        raise IngestionError(f"Empty count table: {filepath_or_buffer}")
    except FileNotFoundError:
        raise IngestionError(f"Count table not found: {filepath_or_buffer}")
    missing = [c for c in COUNT_COLUMNS if c not in table.columns]
    if missing:
        raise IngestionError(f"Count table is missing columns {missing}")
    if not len(table):
        raise IngestionError(f"Empty count table: {filepath_or_buffer}")
    count_cols = list(COUNT_OUTCOMES) + [c for c in ["rounds"] if c in table.columns]
    if table[count_cols + ["x", "y"]].isna().any().any():
        raise IngestionError("Count table contains missing values")
    values = table[count_cols].to_numpy(dtype=float)
    if np.any(values < 0) or np.any(values != np.round(values)):
        raise IngestionError("Counts must be non-negative integers")
    table[count_cols] = table[count_cols].astype(np.int64)
    bad_inputs = ~table["x"].isin([1, 2]) | ~table["y"].isin([1, 2, 3])
    if bad_inputs.any():
        raise IngestionError(f"Input labels out of range in rows {list(table.index[bad_inputs])}")
    return table


def _select_fiber(table, fiber_m):
    if fiber_m is None:
        fibers = table["fiber_m"].unique()
        if len(fibers) != 1:
            raise IngestionError(f"Table holds several fiber lengths {list(fibers)}; pick one")
        fiber_m = fibers[0]
    rows = table[table["fiber_m"] == fiber_m]
    if not len(rows):
        raise IngestionError(f"No rows for fiber length {fiber_m} m")
    return rows


def counts_from_table(table, fiber_m=None):
    """Return (counts [a,b,x,y], rounds_per_setting [x,y]) for one fiber length.

    Rounds are taken from an optional `rounds` column, else from the row sums.
    """
    rows = _select_fiber(table, fiber_m)
    counts = np.zeros(Behavior.shape, dtype=np.int64)
    rounds = np.zeros(Behavior.shape[2:], dtype=np.int64)
    seen = set()
    for row in rows.itertuples():
        x, y = int(row.x), int(row.y)
        if (x, y) in seen:
            raise IngestionError(f"Duplicate rows for setting (x={x}, y={y})")
        seen.add((x, y))
        for col, (a, b) in COUNT_OUTCOMES.items():
            counts[a, b, x - 1, y - 1] = getattr(row, col)
        total = sum(getattr(row, col) for col in COUNT_OUTCOMES)
        if "rounds" in rows.columns:
            rounds[x - 1, y - 1] = int(row.rounds)
            if total != row.rounds:
                raise IngestionError(
                    f"Counts for setting (x={x}, y={y}) sum to {total}, declared rounds: {int(row.rounds)}"
                )
        else:
            rounds[x - 1, y - 1] = total
    missing = set(DEFAULT_SCENARIO.settings) - seen
    if missing:
        raise IngestionError(f"Count table lacks settings {sorted(missing)}")
    return counts, rounds


def read_projected_table(filepath_or_buffer):
    """{fiber_m: Behavior} from a `fiber_m,x,y,p11,p10,p01,p00` CSV.

    Printed values are rounded, so each setting is renormalized.
    """
    table = pd.read_csv(filepath_or_buffer)
    missing = [c for c in PROJECTED_COLUMNS if c not in table.columns]
    if missing:
        raise IngestionError(f"Behavior table is missing columns {missing}")
    behaviors = {}
    for fiber_m, rows in table.groupby("fiber_m"):
        vectors = {
            (int(r.x), int(r.y)): [r.p00, r.p01, r.p10, r.p11] for r in rows.itertuples()
        }
        missing = set(DEFAULT_SCENARIO.settings) - set(vectors)
        if missing:
            raise IngestionError(f"Behavior table lacks settings {sorted(missing)} at {fiber_m} m")
        try:
            behaviors[int(fiber_m)] = Behavior.from_setting_vectors(vectors, normalize=True)
        except (ValueError, IndexError) as e:
            raise IngestionError(f"Invalid behavior at {fiber_m} m: {e}")
    return behaviors
