"""
NPA-style moment relaxations over measurement projectors and Z operators.

Alphabet:
    A_x   click projector of Alice's input x (x = 1, 2)
    B_y   click projector of Bob's input y (y = 1, 2, 3)
    Z_{a,i}, Z*_{a,i}   non-Hermitian operators of the entropy bound, one pair
          per key outcome a and quadrature node i

Relations: A and B commute with each other and with every Z; projectors are
idempotent. No relation holds between Z words. No-click operators are
eliminated as I - P before assembly.

A monomial is a tuple of OperatorSymbol in canonical form (A block, B block,
Z block); the empty tuple is the identity. A polynomial is a dict
{monomial: complex coefficient}.

The moment matrix is Hermitian, entry (u, v) = <u* v>. It is handed to the
solver through the real embedding [[Re, -Im], [Im, Re]] (moment_field
"complex") or restricted to real symmetric moments (moment_field "real").
"""
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from ..correlations import DEFAULT_SCENARIO
from ..exceptions import AssemblyError, ConfigError
from .. import utils

SECTOR_A, SECTOR_B, SECTOR_Z = 0, 1, 2
SECTOR_NAMES = {"A": SECTOR_A, "B": SECTOR_B, "Z": SECTOR_Z}
PIN_SUM_ATOL = 1e-9
MOMENT_FIELDS = ("complex", "real")


class OperatorSymbol(NamedTuple):
    sector: int  # SECTOR_A, SECTOR_B or SECTOR_Z
    label: tuple  # (x,) | (y,) | (a, i, adjoint)

    def adjoint(self):
        if self.sector == SECTOR_Z:
            a, i, dag = self.label
            return OperatorSymbol(SECTOR_Z, (a, i, 1 - dag))
        return self

    def __str__(self):
        if self.sector == SECTOR_A:
            return f"A{self.label[0]}"
        if self.sector == SECTOR_B:
            return f"B{self.label[0]}"
        a, i, dag = self.label
        return f"Z{'*' if dag else ''}({a},{i})"


IDENTITY = ()


def A(x):
    return OperatorSymbol(SECTOR_A, (x,))


def B(y):
    return OperatorSymbol(SECTOR_B, (y,))


def Z(a, i, adjoint=False):
    return OperatorSymbol(SECTOR_Z, (a, i, int(adjoint)))


def _collapse(symbols):
    out = []
    for s in symbols:
        if out and s == out[-1]:
            continue
        out.append(s)
    return out


def canonicalize(word):
    """Sector-sorted word with consecutive projector repeats collapsed."""
    a_part = _collapse([s for s in word if s.sector == SECTOR_A])
    b_part = _collapse([s for s in word if s.sector == SECTOR_B])
    z_part = [s for s in word if s.sector == SECTOR_Z]
    return tuple(a_part + b_part + z_part)


def adjoint(word):
    return canonicalize(tuple(s.adjoint() for s in reversed(word)))


def word_str(word):
    return " ".join(str(s) for s in word) if word else "1"


def word_key(word):
    return (len(word), word)


def moment_representative(word):
    """(rep, conjugated): <word> = <rep> if not conjugated else conj(<rep>)."""
    adj = adjoint(word)
    if word_key(adj) < word_key(word):
        return adj, True
    return word, False


# Polynomials


def poly_add(*polys):
    out = {}
    for poly in polys:
        for w, c in poly.items():
            out[w] = out.get(w, 0) + c
    return {w: c for w, c in out.items() if c != 0}


def poly_scale(poly, scale):
    return {w: scale * c for w, c in poly.items() if scale * c != 0}


def poly_mul(*polys):
    out = {IDENTITY: 1.0}
    for poly in polys:
        nxt = {}
        for w1, c1 in out.items():
            for w2, c2 in poly.items():
                w = canonicalize(w1 + w2)
                nxt[w] = nxt.get(w, 0) + c1 * c2
        out = {w: c for w, c in nxt.items() if c != 0}
    return out


def poly_adjoint(poly):
    return poly_add(*[{adjoint(w): np.conj(c)} for w, c in poly.items()])


def outcome_projector(symbol, outcome):
    """Outcome 0 (click) is the projector itself, outcome 1 is I - P."""
    if outcome == 0:
        return {(symbol,): 1.0}
    return {IDENTITY: 1.0, (symbol,): -1.0}


def probability_polynomial(a, b, x, y):
    return poly_mul(outcome_projector(A(x), a), outcome_projector(B(y), b))


# Relaxation levels


@dataclass(frozen=True)
class LevelSpec:
    base_level: int
    extra_sets: tuple = ()

    def __post_init__(self):
        if int(self.base_level) != self.base_level or self.base_level < 1:
            raise ConfigError(f"Relaxation base level must be an integer >= 1, got {self.base_level}")
        for pattern in self.extra_sets:
            if not pattern or set(pattern) - set(SECTOR_NAMES):
                raise ConfigError(f"Invalid extra monomial pattern '{pattern}'")
        object.__setattr__(self, "extra_sets", tuple(self.extra_sets))

    @classmethod
    def parse(cls, text):
        """'2', '2+ABZ+AZZ', '1+AB' -> LevelSpec."""
        if isinstance(text, LevelSpec):
            return text
        parts = [p.strip() for p in str(text).split("+")]
        try:
            base = int(parts[0])
        except ValueError:
            raise ConfigError(f"Relaxation level '{text}' must start with an integer")
        return cls(base, tuple(p.upper() for p in parts[1:]))

    def __str__(self):
        return "+".join([str(self.base_level)] + list(self.extra_sets))


def default_z_labels(n_z):
    """(a, i) labels for n_z operators: a in {0, 1}, i = 1..n_z/2."""
    if n_z % 2:
        raise ValueError(f"n_z counts (a, i) pairs over two outcomes; got odd n_z={n_z}")
    return tuple((a, i) for i in range(1, n_z // 2 + 1) for a in (0, 1))


def _alphabets(scenario, z_labels):
    letters_a = [A(x) for x in range(1, scenario.n_inputs_a + 1)]
    letters_b = [B(y) for y in range(1, scenario.n_inputs_b + 1)]
    letters_z = [Z(a, i, dag) for a, i in z_labels for dag in (0, 1)]
    return letters_a, letters_b, letters_z


def _pattern_words(pattern, letters_a, letters_b, letters_z):
    """Instantiate an extra pattern; the Z letters of one word share a node."""
    if "Z" not in pattern:
        choices = [letters_a if c == "A" else letters_b for c in pattern]
        return [tuple(w) for w in product(*choices)]
    nodes = sorted({s.label[1] for s in letters_z})
    words = []
    for node in nodes:
        node_z = [s for s in letters_z if s.label[1] == node]
        table = {"A": letters_a, "B": letters_b, "Z": node_z}
        words += [tuple(w) for w in product(*[table[c] for c in pattern])]
    return words


@lru_cache(maxsize=32)
def _build_basis(scenario, z_labels, level):
    letters_a, letters_b, letters_z = _alphabets(scenario, z_labels)
    alphabet = letters_a + letters_b + letters_z
    words = {IDENTITY}
    for length in range(1, level.base_level + 1):
        words.update(canonicalize(w) for w in product(alphabet, repeat=length))
    for pattern in level.extra_sets:
        for w in _pattern_words(pattern, letters_a, letters_b, letters_z):
            w = canonicalize(w)
            words.add(w)
            words.add(adjoint(w))
    return tuple(sorted(words, key=word_key))


def build_basis(scenario=DEFAULT_SCENARIO, n_z=0, level="1", z_labels=None):
    """Deduplicated canonical monomials, identity first, shortest words first."""
    level = LevelSpec.parse(level)
    z_labels = tuple(z_labels) if z_labels is not None else default_z_labels(n_z)
    return list(_build_basis(scenario, z_labels, level))


@lru_cache(maxsize=32)
def _gram_words(basis):
    """Upper-triangle (r, c, canonical(u* v)) of the moment matrix."""
    adjoints = [tuple(s.adjoint() for s in reversed(u)) for u in basis]
    return tuple(
        (r, c, canonicalize(adjoints[r] + basis[c]))
        for r in range(len(basis))
        for c in range(r, len(basis))
    )


# Moment problems


class MomentRegistry(object):
    """Maps moment representatives to real solver columns (Re and, if complex, Im)."""

    def __init__(self, moment_field="complex"):
        if moment_field not in MOMENT_FIELDS:
            raise ConfigError(f"moment_field must be one of {MOMENT_FIELDS}, got '{moment_field}'")
        self.moment_field = moment_field
        self.columns = []  # (representative word, "re" | "im")
        self.index = {}  # representative -> (re column, im column or None)
        self.register(IDENTITY)

    def register(self, word):
        rep, _ = moment_representative(word)
        if rep in self.index:
            return self.index[rep]
        re_col = len(self.columns)
        self.columns.append((rep, "re"))
        im_col = None
        if self.moment_field == "complex" and adjoint(rep) != rep:
            im_col = len(self.columns)
            self.columns.append((rep, "im"))
        self.index[rep] = (re_col, im_col)
        return self.index[rep]

    def __contains__(self, word):
        return moment_representative(word)[0] in self.index

    def __len__(self):
        return len(self.columns)

    def terms(self, word, register=False):
        """[(column, coefficient)] for Re<word> and Im<word>."""
        rep, conj = moment_representative(word)
        if rep not in self.index:
            if not register:
                return None
            self.register(rep)
        re_col, im_col = self.index[rep]
        re_terms = [(re_col, 1.0)]
        im_terms = [] if im_col is None else [(im_col, -1.0 if conj else 1.0)]
        return re_terms, im_terms

    def real_part(self, poly, register=False):
        """Sparse row {column: coefficient} of Re <poly>, or None if a moment is unknown."""
        row = {}
        for w, c in poly.items():
            terms = self.terms(w, register=register)
            if terms is None:
                return None
            re_terms, im_terms = terms
            c = complex(c)
            for col, coeff in re_terms:
                row[col] = row.get(col, 0.0) + c.real * coeff
            for col, coeff in im_terms:
                row[col] = row.get(col, 0.0) - c.imag * coeff
        return {col: v for col, v in row.items() if v != 0}

    def imag_part(self, poly, register=False):
        row = {}
        for w, c in poly.items():
            terms = self.terms(w, register=register)
            if terms is None:
                return None
            re_terms, im_terms = terms
            c = complex(c)
            for col, coeff in re_terms:
                row[col] = row.get(col, 0.0) + c.imag * coeff
            for col, coeff in im_terms:
                row[col] = row.get(col, 0.0) + c.real * coeff
        return {col: v for col, v in row.items() if v != 0}

    def column_names(self):
        return [f"{part}<{word_str(w)}>" for w, part in self.columns]


@dataclass
class PsdBlock:
    """Symmetric matrix affine in the solver columns: vec(M) = coefficients @ y."""

    name: str
    size: int
    coefficients: sp.csr_matrix  # (size * size, n_columns), column-major vec

    @classmethod
    def from_entries(cls, name, size, entries, n_columns):
        """entries: iterable of (row, col, column, coeff) for both triangles."""
        entries = list(entries)
        if entries:
            rows, cols, vars_, coeffs = map(np.asarray, zip(*entries))
        else:
            rows = cols = vars_ = coeffs = np.zeros(0)
        matrix = sp.coo_matrix(
            (coeffs.astype(float), (rows.astype(int) + cols.astype(int) * size, vars_.astype(int))),
            shape=(size * size, n_columns),
        ).tocsr()
        matrix.sum_duplicates()
        return cls(name, size, matrix)

    def resized(self, n_columns):
        m = self.coefficients.tocoo()
        return PsdBlock(
            self.name,
            self.size,
            sp.coo_matrix((m.data, (m.row, m.col)), shape=(m.shape[0], n_columns)).tocsr(),
        )

    def matrix(self, y):
        return np.asarray(self.coefficients @ np.asarray(y)).reshape(self.size, self.size, order="F")


@dataclass
class LinearConstraint:
    id: object  # (a, b, x, y) for pins, "normalization", or a descriptive tuple
    coefficients: dict  # {column: coeff}
    rhs: float = 0.0

    def row(self, n_columns):
        row = np.zeros(n_columns)
        for col, v in self.coefficients.items():
            row[col] = v
        return row


@dataclass
class MomentProblem:
    """Solver-ready moment relaxation.

    Minimizes (or maximizes) objective . y + objective_offset subject to
    eq_constraints (row . y = rhs), op_ineq (row . y >= 0) and psd_blocks >> 0.
    """

    basis: list
    registry: MomentRegistry
    objective: dict
    eq_constraints: list
    psd_blocks: list
    op_ineq: list = field(default_factory=list)
    sense: str = "min"
    objective_offset: float = 0.0
    level: str = ""
    z_labels: tuple = ()

    @property
    def n_columns(self):
        return len(self.registry)

    @property
    def pins(self):
        return [c for c in self.eq_constraints if isinstance(c.id, tuple) and len(c.id) == 4]

    def objective_vector(self):
        return LinearConstraint("objective", self.objective).row(self.n_columns)

    def vector_from_moments(self, moment):
        """Solver vector from a callable word -> complex expectation value."""
        y = np.zeros(self.n_columns)
        for rep, (re_col, im_col) in self.registry.index.items():
            value = complex(moment(rep))
            y[re_col] = value.real
            if im_col is not None:
                y[im_col] = value.imag
        return y

    def moment_value(self, word, y):
        rep, conj = moment_representative(word)
        re_col, im_col = self.registry.index[rep]
        value = y[re_col] + (0 if im_col is None else 1j * y[im_col])
        return np.conj(value) if conj else value


def _gram_entries(registry, basis, entry_words):
    """Embedded PSD entries (row, col, column, coeff) of the moment matrix."""
    n = len(basis)
    complex_field = registry.moment_field == "complex"
    entries = []
    for r, c, w in entry_words:
        re_terms, im_terms = registry.terms(w, register=True)
        for col, coeff in re_terms:
            entries.append((r, c, col, coeff))
            if r != c:
                entries.append((c, r, col, coeff))
            if complex_field:
                entries.append((n + r, n + c, col, coeff))
                if r != c:
                    entries.append((n + c, n + r, col, coeff))
        if complex_field:
            # Im block: lower-left holds Im, upper-right holds -Im; Im is antisymmetric
            for col, coeff in im_terms:
                entries.append((n + r, c, col, coeff))
                entries.append((c, n + r, col, coeff))
                if r != c:
                    entries.append((n + c, r, col, -coeff))
                    entries.append((r, n + c, col, -coeff))
    size = 2 * n if complex_field else n
    return size, entries


def _hermitian_block_entries(registry, rows_polys):
    """Embedded entries of a Hermitian matrix given as {(r, c): poly}, r <= c."""
    n = max(r for r, _ in rows_polys) + 1
    complex_field = registry.moment_field == "complex"
    entries = []
    for (r, c), poly in rows_polys.items():
        re_row = registry.real_part(poly, register=True)
        im_row = registry.imag_part(poly, register=True) if complex_field else {}
        for col, coeff in re_row.items():
            entries += [(r, c, col, coeff)] + ([(c, r, col, coeff)] if r != c else [])
            if complex_field:
                entries += [(n + r, n + c, col, coeff)]
                entries += [(n + c, n + r, col, coeff)] if r != c else []
        for col, coeff in im_row.items():
            entries += [(n + r, c, col, coeff), (c, n + r, col, coeff)]
            if r != c:
                entries += [(n + c, r, col, -coeff), (r, n + c, col, -coeff)]
    return (2 * n if complex_field else n), entries


def _validate_pins(behavior_constraints):
    by_setting = {}
    for a, b, x, y, value in behavior_constraints:
        if (a, b) not in {(0, 0), (0, 1), (1, 0), (1, 1)} or x not in (1, 2) or y not in (1, 2, 3):
            raise AssemblyError(f"Pin index out of range: P({a},{b}|{x},{y})")
        if not -PIN_SUM_ATOL <= value <= 1 + PIN_SUM_ATOL:
            raise AssemblyError(f"Pinned probability P({a},{b}|{x},{y}) = {value} outside [0, 1]")
        by_setting.setdefault((x, y), {})[(a, b)] = value
    for (x, y), values in by_setting.items():
        total = sum(values.values())
        if len(values) == 4 and abs(total - 1) > PIN_SUM_ATOL:
            raise AssemblyError(f"Pinned probabilities of setting (x={x}, y={y}) sum to {total}, not 1")
        if total > 1 + PIN_SUM_ATOL:
            raise AssemblyError(f"Pinned probabilities of setting (x={x}, y={y}) exceed 1: {total}")


def norm_constraint_polys(z_label, alpha, word):
    """Re<w* (alpha - Z Z*) w> >= 0 and Re<w* (alpha - Z* Z) w> >= 0."""
    a, i = z_label
    z, z_dag = Z(a, i), Z(a, i, True)
    w_adj = tuple(s.adjoint() for s in reversed(word))
    base = {canonicalize(w_adj + word): alpha}
    return [
        poly_add(base, {canonicalize(w_adj + (z, z_dag) + word): -1.0}),
        poly_add(base, {canonicalize(w_adj + (z_dag, z) + word): -1.0}),
    ]


def localizing_words(scenario, z_labels, localizing_level):
    if localizing_level == 0:
        return [IDENTITY]
    return build_basis(scenario, level=str(localizing_level), z_labels=z_labels)


def assemble(
    scenario=DEFAULT_SCENARIO,
    behavior_constraints=(),
    objective=None,
    norm_bounds=(),
    level="2",
    n_z=0,
    z_labels=None,
    sense="min",
    moment_field="complex",
    localizing_level=0,
    localizing_matrices=False,
    validate=True,
):
    """Build the MomentProblem of a relaxation.

    Args:
        behavior_constraints: iterable of (a, b, x, y, value), 1-based inputs.
        objective (dict): Hermitian polynomial; its real part is optimized.
        norm_bounds: iterable of ((a, i), alpha) bounding Z Z* and Z* Z by alpha.
        level (str or LevelSpec): e.g. "2+ABZ+AZZ".

    Kwargs:
        localizing_level (int): Scalar constraints use words up to this length
            (0: identity only).
        localizing_matrices (bool): Also add full localizing matrices over the
            level-1 basis.
        validate (bool): Reject pins that cannot form a Behavior restriction.
    """
    level = LevelSpec.parse(level)
    if sense not in ("min", "max"):
        raise ConfigError(f"sense must be 'min' or 'max', got '{sense}'")
    z_labels = tuple(z_labels) if z_labels is not None else default_z_labels(n_z)
    behavior_constraints = [tuple(c) for c in behavior_constraints]
    if validate:
        _validate_pins(behavior_constraints)

    basis = _build_basis(scenario, z_labels, level)
    registry = MomentRegistry(moment_field)
    size, entries = _gram_entries(registry, basis, _gram_words(basis))
    n_gram_columns = len(registry)

    objective = objective or {}
    objective_row = registry.real_part(objective)
    if objective_row is None:
        outside = [word_str(w) for w in objective if w not in registry]
        raise AssemblyError(
            f"Objective references moments outside the level-{level} relaxation: {outside[:5]}"
        )

    eq_constraints = [LinearConstraint("normalization", {0: 1.0}, 1.0)]
    for a, b, x, y, value in behavior_constraints:
        row = registry.real_part(probability_polynomial(a, b, x, y))
        if row is None:
            raise AssemblyError(f"P({a},{b}|{x},{y}) is not expressible at level {level}")
        eq_constraints.append(LinearConstraint((a, b, x, y), row, float(value)))

    op_ineq = []
    extra_blocks = []
    words = localizing_words(scenario, z_labels, localizing_level)
    for z_label, alpha in norm_bounds:
        for w in words:
            for k, poly in enumerate(norm_constraint_polys(z_label, alpha, w)):
                row = registry.real_part(poly, register=True)
                op_ineq.append(LinearConstraint(("norm", z_label, "ZZ*" if k == 0 else "Z*Z", word_str(w)), row))
        if localizing_matrices:
            loc_basis = build_basis(scenario, level="1", z_labels=z_labels)
            a, i = z_label
            for k, middle in enumerate([(Z(a, i), Z(a, i, True)), (Z(a, i, True), Z(a, i))]):
                polys = {}
                for r, u in enumerate(loc_basis):
                    u_adj = tuple(s.adjoint() for s in reversed(u))
                    for c in range(r, len(loc_basis)):
                        v = loc_basis[c]
                        polys[(r, c)] = poly_add(
                            {canonicalize(u_adj + v): alpha}, {canonicalize(u_adj + middle + v): -1.0}
                        )
                loc_size, loc_entries = _hermitian_block_entries(registry, polys)
                extra_blocks.append((f"localizing {'ZZ*' if k == 0 else 'Z*Z'} {z_label}", loc_size, loc_entries))

    n_columns = len(registry)
    blocks = [PsdBlock.from_entries("moment matrix", size, entries, n_columns)]
    blocks += [PsdBlock.from_entries(name, s, e, n_columns) for name, s, e in extra_blocks]
    if n_columns != n_gram_columns:
        blocks = [b.resized(n_columns) for b in blocks]

    return MomentProblem(
        basis=list(basis),
        registry=registry,
        objective=objective_row,
        eq_constraints=eq_constraints,
        psd_blocks=blocks,
        op_ineq=op_ineq,
        sense=sense,
        level=str(level),
        z_labels=z_labels,
    )


def dump_problem(problem, filepath):
    """JSON dump: columns, objective, constraints and sparse blocks (coordinate lists)."""
    blocks = []
    for block in problem.psd_blocks:
        m = block.coefficients.tocoo()
        rows, cols = m.row % block.size, m.row // block.size
        blocks.append(
            {
                "name": block.name,
                "size": block.size,
                "entries": [
                    [int(r), int(c), int(v), float(x)] for r, c, v, x in zip(rows, cols, m.col, m.data)
                ],
            }
        )

    def _constraint(c):
        return {
            "id": str(c.id),
            "coefficients": {str(k): v for k, v in c.coefficients.items()},
            "rhs": c.rhs,
        }

    utils.write_json(
        {
            "sense": problem.sense,
            "level": problem.level,
            "columns": problem.registry.column_names(),
            "basis": [word_str(w) for w in problem.basis],
            "objective": {str(k): v for k, v in problem.objective.items()},
            "objective_offset": problem.objective_offset,
            "eq_constraints": [_constraint(c) for c in problem.eq_constraints],
            "op_ineq": [_constraint(c) for c in problem.op_ineq],
            "psd_blocks": blocks,
        },
        filepath,
    )
