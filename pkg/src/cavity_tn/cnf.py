"""k-SAT formulas: representation, DIMACS I/O, random generation, energy.

Clauses are stored as tuples of DIMACS-style signed integers: literal
``+v`` is variable ``v`` (1-based) and ``-v`` its negation. Everything
array-shaped (assignments, incidence tables) is 0-based.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "CnfInstance",
    "DimacsError",
    "Incidence",
    "parse_dimacs",
    "write_dimacs",
    "random_ksat",
    "energy",
    "simplify",
    "unit_propagate",
    "CONTRADICTION",
]


class DimacsError(ValueError):
    """Malformed DIMACS input; ``line`` is 1-based (0 when not tied to a line)."""

    def __init__(self, msg: str, line: int = 0):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


class _Contradiction:
    """Sentinel returned when simplification produces an empty clause."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CONTRADICTION"

    def __bool__(self):
        return False


CONTRADICTION = _Contradiction()


@dataclass(frozen=True)
class CnfInstance:
    """A CNF formula over variables ``1..num_vars``.

    ``fixed`` maps 1-based variables to the value decimation gave them;
    fixed variables no longer occur in any clause.
    """

    num_vars: int
    clauses: tuple[tuple[int, ...], ...]
    fixed: Mapping[int, bool] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError("num_vars must be nonnegative")
        clauses = tuple(tuple(int(x) for x in c) for c in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        object.__setattr__(self, "fixed", dict(self.fixed))
        for c in clauses:
            if not c:
                raise ValueError("empty clause")
            if len({abs(x) for x in c}) != len(c):
                raise ValueError(f"variable repeated in clause {c}")
            for x in c:
                if x == 0 or abs(x) > self.num_vars:
                    raise ValueError(f"literal {x} out of range 1..{self.num_vars}")
        for v in self.fixed:
            if not 1 <= v <= self.num_vars:
                raise ValueError(f"fixed variable {v} out of range")

    def __eq__(self, other):
        if not isinstance(other, CnfInstance):
            return NotImplemented
        return (self.num_vars, self.clauses, self.fixed) == (
            other.num_vars, other.clauses, other.fixed)

    def __hash__(self):
        return hash((self.num_vars, self.clauses))

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    @property
    def alpha(self) -> float:
        return self.num_clauses / self.num_vars if self.num_vars else 0.0

    @cached_property
    def incidence(self) -> "Incidence":
        return Incidence.from_clauses(self.num_vars, self.clauses)

    def unfixed(self) -> list[int]:
        """0-based indices of variables not yet fixed."""
        return [i for i in range(self.num_vars) if i + 1 not in self.fixed]


@dataclass(frozen=True, eq=False)
class Incidence:
    """Flat edge tables of the variable/clause incidence graph.

    Edges are numbered variable-major: all edges of variable 0 (in clause
    order), then variable 1, and so on. This numbering is the sweep order
    of every message-passing routine in the package.

    Attributes
    ----------
    edge_var, edge_clause : (E,) int arrays
        Endpoints of each edge (0-based).
    edge_neg : (E,) bool array
        Whether the variable appears negated in the clause.
    var_ptr : (N + 1,) int array
        Edges of variable ``i`` are ``var_ptr[i]:var_ptr[i + 1]``.
    clause_ptr, clause_edges : int arrays
        Edge ids of clause ``a`` are ``clause_edges[clause_ptr[a]:clause_ptr[a + 1]]``,
        in literal order.
    """

    num_vars: int
    num_clauses: int
    edge_var: np.ndarray
    edge_clause: np.ndarray
    edge_neg: np.ndarray
    var_ptr: np.ndarray
    clause_ptr: np.ndarray
    clause_edges: np.ndarray

    @classmethod
    def from_clauses(cls, num_vars: int, clauses: Sequence[Sequence[int]]) -> "Incidence":
        m = len(clauses)
        lens = np.fromiter((len(c) for c in clauses), dtype=np.int64, count=m)
        flat = np.fromiter((x for c in clauses for x in c), dtype=np.int64,
                           count=int(lens.sum()))
        cl = np.repeat(np.arange(m, dtype=np.int64), lens)
        var = np.abs(flat) - 1
        # stable sort keeps clause order within each variable
        order = np.argsort(var, kind="stable")
        edge_of_literal = np.empty_like(order)
        edge_of_literal[order] = np.arange(len(order))
        var_ptr = np.zeros(num_vars + 1, dtype=np.int64)
        np.cumsum(np.bincount(var, minlength=num_vars), out=var_ptr[1:])
        clause_ptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(lens, out=clause_ptr[1:])
        return cls(
            num_vars=num_vars,
            num_clauses=m,
            edge_var=var[order],
            edge_clause=cl[order],
            edge_neg=(flat < 0)[order],
            var_ptr=var_ptr,
            clause_ptr=clause_ptr,
            clause_edges=edge_of_literal,
        )

    @property
    def num_edges(self) -> int:
        return len(self.edge_var)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        """``(variable, clause) -> edge id``, 0-based."""
        return {(int(v), int(a)): e for e, (v, a) in
                enumerate(zip(self.edge_var, self.edge_clause))}

    def var_edges(self, i: int) -> np.ndarray:
        return np.arange(self.var_ptr[i], self.var_ptr[i + 1])

    def clause_edge_ids(self, a: int) -> np.ndarray:
        return self.clause_edges[self.clause_ptr[a]:self.clause_ptr[a + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.var_ptr)


# ---------------------------------------------------------------------- #
# DIMACS


def parse_dimacs(text: str | io.TextIOBase) -> CnfInstance:
    """Parse DIMACS CNF text (whitespace tolerant; clauses may span lines)."""
    if not isinstance(text, str):
        text = text.read()
    header = None
    clauses: list[tuple[int, ...]] = []
    current: list[int] = []
    current_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):  # SATLIB end marker
            break
        if line.startswith("p"):
            parts = line.split()
            if header is not None:
                raise DimacsError("second header", lineno)
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"bad header {line!r}", lineno)
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError:
                raise DimacsError(f"bad header {line!r}", lineno) from None
            if header[0] < 0 or header[1] < 0:
                raise DimacsError("negative counts in header", lineno)
            continue
        if header is None:
            raise DimacsError("clause before 'p cnf' header", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(f"bad literal {tok!r}", lineno) from None
            if not current:
                current_line = lineno
            if lit == 0:
                clauses.append(_check_clause(current, header[0], current_line))
                current = []
            else:
                current.append(lit)
    if header is None:
        raise DimacsError("missing 'p cnf' header")
    if current:
        # tolerate a final clause without its terminating 0
        clauses.append(_check_clause(current, header[0], current_line))
    if len(clauses) != header[1]:
        raise DimacsError(f"header declares {header[1]} clauses, found {len(clauses)}")
    return CnfInstance(header[0], tuple(clauses))


def _check_clause(lits, n, lineno):
    if not lits:
        raise DimacsError("empty clause", lineno)
    seen = set()
    for x in lits:
        if abs(x) > n:
            raise DimacsError(f"literal {x} out of range 1..{n}", lineno)
        if abs(x) in seen:
            raise DimacsError(f"duplicate variable {abs(x)} in clause", lineno)
        seen.add(abs(x))
    return tuple(lits)


def write_dimacs(instance: CnfInstance) -> str:
    lines = [f"p cnf {instance.num_vars} {instance.num_clauses}"]
    lines += [" ".join(map(str, c)) + " 0" for c in instance.clauses]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------- #
# generation and evaluation


def random_ksat(n: int, m: int, k: int, seed: int) -> CnfInstance:
    """Uniform random k-SAT: each clause draws ``k`` distinct variables and
    negates each with probability 1/2. Duplicate clauses are allowed.
    """
    if n < 1 or m < 0 or k < 1:
        raise ValueError("need n >= 1, m >= 0, k >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    rng = np.random.default_rng(seed)
    if m == 0:
        return CnfInstance(n, ())
    # k smallest of n uniform keys = uniform k-subset, vectorized over clauses
    if n <= 64 or k * 8 > n:
        vs = np.argsort(rng.random((m, n)), axis=1)[:, :k]
    else:
        vs = _distinct_draws(rng, n, m, k)
    signs = np.where(rng.random((m, k)) < 0.5, -1, 1)
    lits = (vs + 1) * signs
    return CnfInstance(n, tuple(map(tuple, lits.tolist())))


def _distinct_draws(rng, n, m, k):
    vs = rng.integers(0, n, size=(m, k))
    while True:
        s = np.sort(vs, axis=1)
        bad = np.any(s[:, 1:] == s[:, :-1], axis=1)
        if not bad.any():
            return vs
        vs[bad] = rng.integers(0, n, size=(int(bad.sum()), k))


def energy(instance: CnfInstance, x) -> int:
    """Number of clauses violated by the 0-based boolean assignment ``x``."""
    x = np.asarray(x, dtype=bool)
    if x.shape != (instance.num_vars,):
        raise ValueError(f"assignment length {x.shape} != {instance.num_vars}")
    if not instance.clauses:
        return 0
    inc = instance.incidence
    lit_true = x[inc.edge_var] != inc.edge_neg
    sat = np.zeros(instance.num_clauses, dtype=bool)
    np.logical_or.at(sat, inc.edge_clause, lit_true)
    return int(instance.num_clauses - np.count_nonzero(sat))


# ---------------------------------------------------------------------- #
# simplification


def _simplify(instance: CnfInstance, var: int, value: bool):
    """Fix 1-based ``var``; return ``(instance or CONTRADICTION, kept)`` where
    ``kept`` lists the surviving original clause indices in order."""
    if not 1 <= var <= instance.num_vars:
        raise ValueError(f"variable {var} out of range")
    if var in instance.fixed:
        raise ValueError(f"variable {var} already fixed")
    true_lit = var if value else -var
    clauses, kept = [], []
    for a, c in enumerate(instance.clauses):
        if true_lit in c:
            continue
        if -true_lit in c:
            c = tuple(x for x in c if x != -true_lit)
            if not c:
                return CONTRADICTION, None
        clauses.append(c)
        kept.append(a)
    fixed = dict(instance.fixed)
    fixed[var] = bool(value)
    return CnfInstance(instance.num_vars, tuple(clauses), fixed), kept


def simplify(instance: CnfInstance, var: int, value: bool):
    """Fix 1-based ``var`` to ``value``: drop satisfied clauses and delete the
    falsified literal elsewhere. Returns ``CONTRADICTION`` if a clause empties.
    """
    return _simplify(instance, var, value)[0]


def unit_propagate(instance: CnfInstance, kept: Iterable[int] | None = None):
    """Repeatedly fix variables forced by unit clauses.

    Returns ``(instance or CONTRADICTION, kept)`` with ``kept`` mapping the
    surviving clauses back to the caller's clause numbering.
    """
    kept = list(range(instance.num_clauses)) if kept is None else list(kept)
    while True:
        units = [c[0] for c in instance.clauses if len(c) == 1]
        if not units:
            return instance, kept
        lit = units[0]
        if -lit in units:
            return CONTRADICTION, None
        instance, sub = _simplify(instance, abs(lit), lit > 0)
        if instance is CONTRADICTION:
            return CONTRADICTION, None
        kept = [kept[a] for a in sub]
