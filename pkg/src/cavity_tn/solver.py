"""Decimation driven by BP or SP biases, WalkSat, and the SP -> WalkSat
pipeline.

Decimation keeps the original incidence tables and a partial assignment;
the residual formula (unsatisfied clauses restricted to free variables) is
rebuilt with array operations at every step. Messages are stored per
original edge, so re-runs warm-start from the previous fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .bp import BpConfig, ContradictionError, _sat_init, run_sat_bp
from .cnf import CnfInstance, Incidence, energy
from .sp import SpState, init_sp_state, run_sp, sat_bp_biases, sp_biases

__all__ = [
    "DecimationConfig",
    "SolveResult",
    "decimate",
    "walksat",
    "solve_pipeline",
    "Residual",
    "residual",
]

ENGINES = ("bp", "sp")


@dataclass(frozen=True)
class DecimationConfig:
    """Parameters of a decimation run.

    Attributes
    ----------
    engine : {"bp", "sp"}
    bias_threshold : float
        SP hands over to WalkSat once the largest ``|bias|`` drops below it.
    bp_config : BpConfig
        Message-passing parameters for either engine.
    walksat_flips, walksat_mixing :
        Flip budget and random-walk probability ``p``.
    seed : int
    unit_propagation : bool or None
        Exhaustive unit propagation before the first step and after every
        fix. ``None`` means on for SP, off for BP.
    warm_start : bool
        Re-run the engine from the previous messages instead of a fresh
        initialization.
    normalized_bias : bool
        Use SP biases normalized by ``p0 + p1 + pstar``.
    restricted_walksat : bool
        Greedy WalkSat moves scan only variables in violated clauses.
    walksat_on_failure : bool
        When SP stops converging mid-way, give the residual to WalkSat
        instead of returning ``UNKNOWN``.
    """

    engine: str = "sp"
    bias_threshold: float = 1e-3
    bp_config: BpConfig = field(default_factory=BpConfig)
    walksat_flips: int = 10**6
    walksat_mixing: float = 0.5
    seed: int = 0
    unit_propagation: bool | None = None
    warm_start: bool = True
    normalized_bias: bool = False
    restricted_walksat: bool = False
    walksat_on_failure: bool = False

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if not self.bias_threshold > 0:
            raise ValueError("bias_threshold must be positive")
        if self.walksat_flips < 0:
            raise ValueError("walksat_flips must be nonnegative")
        if not 0.0 <= self.walksat_mixing <= 1.0:
            raise ValueError("walksat_mixing must lie in [0, 1]")

    @property
    def propagate_units(self) -> bool:
        if self.unit_propagation is None:
            return self.engine == "sp"
        return self.unit_propagation


@dataclass
class SolveResult:
    """Outcome of a solve.

    ``assignment`` (0-based booleans) is set only for ``SAT`` and has been
    checked against the original instance. ``trace`` holds one
    ``(variable, value, bias, engine iterations)`` tuple per decimation step,
    variables 1-based.
    """

    status: str
    assignment: np.ndarray | None = None
    decimation_steps: int = 0
    trace: list = field(default_factory=list)
    flips: int = 0
    handed_to_walksat: bool = False

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "assignment": (None if self.assignment is None else
                           {f"x{i + 1}": bool(v) for i, v in enumerate(self.assignment)}),
            "decimation_steps": self.decimation_steps,
            "walksat_flips": self.flips,
            "handed_to_walksat": self.handed_to_walksat,
            "trace": [list(t) for t in self.trace],
        }


def _verified(instance: CnfInstance, x, **kw) -> SolveResult:
    x = np.asarray(x, dtype=bool)
    e = energy(instance, x)
    if e != 0:
        raise RuntimeError(f"assignment claimed SAT violates {e} clauses")
    return SolveResult("SAT", x, **kw)


# ---------------------------------------------------------------------- #
# residual formula over the original incidence tables


@dataclass
class Residual:
    """Unsatisfied clauses restricted to free variables.

    ``incidence`` is renumbered: ``free_vars[i]`` is the original index of
    residual variable ``i`` and ``edges[e]`` the original edge id of
    residual edge ``e``.
    """

    incidence: Incidence
    free_vars: np.ndarray
    edges: np.ndarray
    contradiction: bool


def residual(inc: Incidence, value: np.ndarray) -> Residual:
    """Residual formula for a partial assignment ``value`` (-1 = free)."""
    assigned = value >= 0
    lit_true = assigned[inc.edge_var] & (value[inc.edge_var] == np.where(inc.edge_neg, 0, 1))
    m = inc.num_clauses
    sat = np.bincount(inc.edge_clause, weights=lit_true, minlength=m) > 0
    active = ~sat[inc.edge_clause] & ~assigned[inc.edge_var]
    live_count = np.bincount(inc.edge_clause[active], minlength=m)
    contradiction = bool(np.any(~sat & (live_count == 0)))

    free_vars = np.flatnonzero(~assigned)
    var_new = np.full(inc.num_vars, -1, dtype=np.int64)
    var_new[free_vars] = np.arange(len(free_vars))
    live = np.flatnonzero(~sat)
    cl_new = np.full(m, -1, dtype=np.int64)
    cl_new[live] = np.arange(len(live))
    edges = np.flatnonzero(active)
    edge_new = np.full(inc.num_edges, -1, dtype=np.int64)
    edge_new[edges] = np.arange(len(edges))

    ev = var_new[inc.edge_var[edges]]
    ec = cl_new[inc.edge_clause[edges]]
    var_ptr = np.zeros(len(free_vars) + 1, dtype=np.int64)
    np.cumsum(np.bincount(ev, minlength=len(free_vars)), out=var_ptr[1:])
    clause_ptr = np.zeros(len(live) + 1, dtype=np.int64)
    np.cumsum(np.bincount(ec, minlength=len(live)), out=clause_ptr[1:])
    ce = inc.clause_edges[active[inc.clause_edges]]
    new_inc = Incidence(
        num_vars=len(free_vars), num_clauses=len(live),
        edge_var=ev, edge_clause=ec, edge_neg=inc.edge_neg[edges],
        var_ptr=var_ptr, clause_ptr=clause_ptr, clause_edges=edge_new[ce],
    )
    return Residual(new_inc, free_vars, edges, contradiction)


def _propagate(inc: Incidence, value: np.ndarray) -> bool:
    """Fix unit clauses until none is left; ``False`` on contradiction."""
    while True:
        res = residual(inc, value)
        if res.contradiction:
            return False
        r = res.incidence
        units = np.flatnonzero(np.diff(r.clause_ptr) == 1)
        if not len(units):
            return True
        e = r.clause_edges[r.clause_ptr[units]]
        v = res.free_vars[r.edge_var[e]]
        want = np.where(r.edge_neg[e], 0, 1).astype(value.dtype)
        order = np.argsort(v, kind="stable")
        v, want = v[order], want[order]
        same = v[1:] == v[:-1]
        if np.any(same & (want[1:] != want[:-1])):
            return False
        value[v] = want


# ---------------------------------------------------------------------- #
# WalkSat


def _walksat_inc(inc: Incidence, f: int, p: float, rng, restricted: bool):
    x = rng.random(inc.num_vars) < 0.5
    _kernels._seed(int(rng.integers(2**31 - 1)))
    solved, flips = _kernels.walksat_run(
        x, inc.var_ptr, inc.edge_clause, inc.clause_ptr, inc.clause_edges,
        inc.edge_var, inc.edge_neg, int(f), float(p), bool(restricted))
    return bool(solved), int(flips), x


def walksat(instance: CnfInstance, f: int = 10**6, p: float = 0.5, seed=0,
            restricted: bool = False) -> SolveResult:
    """Local search from a random assignment, at most ``f`` flips.

    With probability ``1 - p`` flip the variable whose flip lowers the
    number of violated clauses the most (ties broken at random), otherwise
    flip a random variable of a random violated clause.
    """
    rng = np.random.default_rng(seed)
    solved, flips, x = _walksat_inc(instance.incidence, f, p, rng, restricted)
    if solved:
        return _verified(instance, x, flips=flips)
    return SolveResult("UNKNOWN", flips=flips)


# ---------------------------------------------------------------------- #
# decimation


def decimate(instance: CnfInstance, config: DecimationConfig = DecimationConfig()) -> SolveResult:
    """Fix the most biased variable, simplify, repeat.

    Returns ``UNKNOWN`` if the engine fails to converge (or WalkSat fails
    on the residual), ``CONTRADICTION`` if a clause is emptied or messages
    become contradictory, and ``SAT`` with a verified assignment otherwise.
    """
    inc = instance.incidence
    n = instance.num_vars
    value = np.full(n, -1, dtype=np.int8)
    for v, b in instance.fixed.items():
        value[v - 1] = int(b)
    rng = np.random.default_rng(config.seed)
    bp_cfg = config.bp_config
    # messages per original edge, for warm starts
    if config.engine == "sp":
        full = init_sp_state(instance, bp_cfg)
    else:
        full = _sat_init(inc, bp_cfg)

    trace = []
    steps = 0

    def hand_off(res):
        solved, flips, xr = _walksat_inc(res.incidence, config.walksat_flips,
                                         config.walksat_mixing, rng, config.restricted_walksat)
        if not solved:
            return SolveResult("UNKNOWN", decimation_steps=steps, trace=trace,
                               flips=flips, handed_to_walksat=True)
        x = np.where(value < 0, 0, value).astype(bool)
        x[res.free_vars] = xr
        return _verified(instance, x, decimation_steps=steps, trace=trace,
                         flips=flips, handed_to_walksat=True)

    if config.propagate_units and not _propagate(inc, value):
        return SolveResult("CONTRADICTION", trace=trace)
    while True:
        res = residual(inc, value)
        if res.contradiction:
            return SolveResult("CONTRADICTION", decimation_steps=steps, trace=trace)
        r = res.incidence
        if r.num_clauses == 0:
            x = np.where(value < 0, 0, value).astype(bool)
            return _verified(instance, x, decimation_steps=steps, trace=trace)

        if not config.warm_start and steps:
            cfg = replace(bp_cfg, seed=int(rng.integers(2**31 - 1)))
            full = (init_sp_state(instance, cfg) if config.engine == "sp"
                    else _sat_init(inc, cfg))
        try:
            if config.engine == "sp":
                state = SpState(full.q_hat[res.edges], full.q_triple[res.edges])
                rep = run_sp(_as_instance(r), bp_cfg, "direct", state)
                full.q_hat[res.edges] = rep.state.q_hat
                full.q_triple[res.edges] = rep.state.q_triple
                if rep.contradiction:
                    return SolveResult("CONTRADICTION", decimation_steps=steps, trace=trace)
                if not rep.converged:
                    if config.walksat_on_failure:
                        return hand_off(res)
                    return SolveResult("UNKNOWN", decimation_steps=steps, trace=trace)
                bias = sp_biases(_as_instance(r), rep.state, config.normalized_bias).bias
            else:
                warm = (full[0][res.edges], full[1][res.edges])
                rep = run_sat_bp(_as_instance(r), bp_cfg, warm)
                full[0][res.edges] = rep.nu
                full[1][res.edges] = rep.nuhat
                if rep.contradiction:
                    return SolveResult("CONTRADICTION", decimation_steps=steps, trace=trace)
                if not rep.converged:
                    return SolveResult("UNKNOWN", decimation_steps=steps, trace=trace)
                bias = sat_bp_biases(_as_instance(r), rep.nuhat).bias
        except ContradictionError:
            return SolveResult("CONTRADICTION", decimation_steps=steps, trace=trace)

        j = int(np.argmax(np.abs(bias)))   # first maximizer = lowest index
        big = float(np.abs(bias[j]))
        if config.engine == "sp" and big < config.bias_threshold:
            return hand_off(res)

        var = int(res.free_vars[j])
        val = 0 if bias[j] >= 0 else 1
        value[var] = val
        steps += 1
        trace.append((var + 1, bool(val), float(bias[j]), int(rep.iterations)))
        if config.propagate_units and not _propagate(inc, value):
            return SolveResult("CONTRADICTION", decimation_steps=steps, trace=trace)


class _IncidenceView:
    """Just enough of :class:`CnfInstance` for the message-passing engines."""

    __slots__ = ("incidence", "num_vars", "num_clauses")

    def __init__(self, inc: Incidence):
        self.incidence = inc
        self.num_vars = inc.num_vars
        self.num_clauses = inc.num_clauses


def _as_instance(inc: Incidence):
    return _IncidenceView(inc)


def solve_pipeline(instance: CnfInstance,
                   config: DecimationConfig = DecimationConfig()) -> SolveResult:
    """SP decimation until biases are small, then WalkSat on the residual.

    The residual also goes to WalkSat if SP stops converging part way.
    """
    return decimate(instance, replace(config, engine="sp", walksat_on_failure=True))
