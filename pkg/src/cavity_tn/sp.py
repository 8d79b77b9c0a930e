"""Survey Propagation: direct updates, the tensor-network form, and biases.

Messages are indexed by the edge numbering of the instance's incidence
tables: ``q_hat[e]`` flows clause -> variable, ``q_triple[e] = (QU, QS,
Qstar)`` flows variable -> clause.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bp import (BpConfig, BpReport, EnvironmentSet, ZeroMessageError, run_bp,
                 sat_marginals, variable_marginal)
from .cnf import CnfInstance
from .graph import (HAT, NOT_HAT, QS, QSTAR, QU, SP_BOND, TensorFactorGraph,
                    build_sp_tfg, clause_node, var_node)
from .tensor import Tensor, contract

__all__ = [
    "SpState",
    "SpReport",
    "BiasVector",
    "init_sp_state",
    "sp_update_direct",
    "sp_update_tensor",
    "run_sp",
    "sp_biases",
    "bp_biases",
    "sat_bp_biases",
]


@dataclass
class SpState:
    """SP messages on every edge of an instance.

    Attributes
    ----------
    q_hat : (E,) array
        Clause -> variable surveys, in ``[0, 1]``.
    q_triple : (E, 3) array
        Variable -> clause ``(QU, QS, Qstar)``, each row summing to 1.
    """

    q_hat: np.ndarray
    q_triple: np.ndarray

    def copy(self) -> "SpState":
        return SpState(self.q_hat.copy(), self.q_triple.copy())

    def to_environments(self, instance: CnfInstance) -> EnvironmentSet:
        """5-slot environments for ``build_sp_tfg(instance)``."""
        inc = instance.incidence
        envs = {}
        for e in range(inc.num_edges):
            x, c = var_node(int(inc.edge_var[e])), clause_node(int(inc.edge_clause[e]))
            down = np.zeros(SP_BOND)
            down[HAT], down[NOT_HAT] = self.q_hat[e], 1.0 - self.q_hat[e]
            up = np.zeros(SP_BOND)
            up[[QU, QS, QSTAR]] = self.q_triple[e]
            envs[(c, x)] = down
            envs[(x, c)] = up
        return envs

    @classmethod
    def from_environments(cls, instance: CnfInstance, envs: EnvironmentSet) -> "SpState":
        inc = instance.incidence
        q_hat = np.empty(inc.num_edges)
        tri = np.empty((inc.num_edges, 3))
        for e in range(inc.num_edges):
            x, c = var_node(int(inc.edge_var[e])), clause_node(int(inc.edge_clause[e]))
            q_hat[e] = envs[(c, x)][HAT]
            tri[e] = envs[(x, c)][[QU, QS, QSTAR]]
        return cls(q_hat, tri)


def init_sp_state(instance: CnfInstance, config: BpConfig = BpConfig()) -> SpState:
    """``uniform``: ``q_hat = 1/2`` and triples ``(1/3, 1/3, 1/3)``.
    ``random``: ``q_hat ~ U(0, 1)`` and triples uniform on the simplex."""
    e = instance.incidence.num_edges
    if config.init == "uniform":
        return SpState(np.full(e, 0.5), np.full((e, 3), 1.0 / 3.0))
    rng = np.random.default_rng(config.seed)
    q_hat = rng.random(e)
    tri = rng.exponential(size=(e, 3))
    tri /= tri.sum(axis=1, keepdims=True)
    return SpState(q_hat, tri)


def _edge_of(instance, edge):
    s, n = edge
    if s[0] == "c":
        return instance.incidence.edge_index[(n[1], s[1])], "down"
    return instance.incidence.edge_index[(s[1], n[1])], "up"


def sp_update_direct(instance: CnfInstance, state: SpState, edge):
    """New message on a directed edge ``(source node, target node)``.

    Clause -> variable returns the scalar ``Qhat``; variable -> clause the
    normalized triple ``(QU, QS, Qstar)``.

    Raises
    ------
    ZeroMessageError
        If the unnormalized triple vanishes.
    """
    inc = instance.incidence
    e, way = _edge_of(instance, edge)
    if way == "down":
        a = inc.edge_clause[e]
        others = [g for g in inc.clause_edge_ids(a) if g != e]
        return float(np.prod(state.q_triple[others, 0])) if others else 1.0
    i = inc.edge_var[e]
    p_s = p_u = 1.0
    for f in inc.var_edges(i):
        if f == e:
            continue
        if inc.edge_neg[f] == inc.edge_neg[e]:
            p_s *= 1.0 - state.q_hat[f]
        else:
            p_u *= 1.0 - state.q_hat[f]
    raw = np.array([p_s * (1.0 - p_u), p_u * (1.0 - p_s), p_s * p_u])
    tot = raw.sum()
    if not tot > 0:
        raise ZeroMessageError(edge)
    return raw / tot


def sp_update_tensor(sp_graph: TensorFactorGraph, envs: EnvironmentSet, edge) -> np.ndarray:
    """Contract the directional update tensor of ``edge`` with its incoming
    environments; returns the normalized 5-vector."""
    s, n = edge
    t = sp_graph.directional[edge]
    out = t.labels[0]
    ins = [Tensor((f,), envs[(sp_graph.other(f, s), s)]) for f in t.labels[1:]]
    raw = contract([t, *ins], (out,)).to_dense()
    tot = raw.sum()
    if not tot > 0:
        raise ZeroMessageError(edge)
    return raw / tot


@dataclass
class SpReport(BpReport):
    state: SpState | None = None


def run_sp(instance: CnfInstance, config: BpConfig = BpConfig(), mode: str = "direct",
           state: SpState | None = None) -> SpReport:
    """Iterate SP to convergence.

    ``direct`` runs compiled sweeps over the message arrays; ``tensor``
    runs plain tensorized BP on ``build_sp_tfg(instance)``. Both follow
    the same sweep order and L1 convergence rule on the 5-slot embedding.
    """
    if state is None:
        state = init_sp_state(instance, config)
    state = state.copy()
    if mode == "tensor":
        graph = build_sp_tfg(instance)
        rep = run_bp(graph, config, state.to_environments(instance))
        new = SpState.from_environments(instance, rep.environments)
        return SpReport(rep.status, rep.iterations, rep.final_delta, rep.environments,
                        rep.contradiction, state=new)
    if mode != "direct":
        raise ValueError(f"unknown mode {mode!r}")
    inc = instance.incidence
    if inc.num_edges == 0:
        return SpReport("SUCCESS", 1, 0.0, None, state=state)
    status, it, delta = _kernels.sp_sweeps(
        inc.var_ptr, inc.clause_ptr, inc.clause_edges, inc.edge_clause, inc.edge_neg,
        state.q_hat, state.q_triple, float(config.tolerance), int(config.max_iterations),
        float(config.damping), config.schedule == "two_phase")
    if status == _kernels.CONVERGED:
        return SpReport("SUCCESS", int(it), float(delta), None, state=state)
    if status == _kernels.ZERO:
        return SpReport("FAILURE", int(it), math.inf, None, True, state=state)
    return SpReport("FAILURE", int(it), float(delta), None, state=state)


# ---------------------------------------------------------------------- #
# biases


@dataclass
class BiasVector:
    """Per-variable ``bias = p0 - p1``; a positive bias favours ``x = 0``."""

    p0: np.ndarray
    p1: np.ndarray

    @property
    def bias(self) -> np.ndarray:
        return self.p0 - self.p1


def sp_biases(instance: CnfInstance, state: SpState, normalized: bool = False) -> BiasVector:
    """SP decimation weights.

    ``p0`` is the probability that the positive-literal clauses are all
    silent while some negated-literal clause warns (and symmetrically for
    ``p1``). With ``normalized`` both are divided by ``p0 + p1 + pstar``,
    ``pstar`` being the weight of no warning at all.
    """
    inc = instance.incidence
    n = instance.num_vars
    log_free = np.zeros((n, 2))   # column 0: negated clauses, 1: positive
    hit = np.zeros((n, 2), dtype=bool)
    side = np.where(inc.edge_neg, 0, 1)
    one_minus = 1.0 - state.q_hat
    zero = one_minus <= 0.0
    with np.errstate(divide="ignore"):
        np.add.at(log_free, (inc.edge_var, side), np.log(np.where(zero, 1.0, one_minus)))
    np.logical_or.at(hit, (inc.edge_var, side), zero)
    prod = np.where(hit, 0.0, np.exp(log_free))
    p0 = prod[:, 1] * (1.0 - prod[:, 0])
    p1 = prod[:, 0] * (1.0 - prod[:, 1])
    if normalized:
        tot = p0 + p1 + prod[:, 0] * prod[:, 1]
        safe = np.where(tot > 0, tot, 1.0)
        p0, p1 = p0 / safe, p1 / safe
    return BiasVector(p0, p1)


def bp_biases(graph: TensorFactorGraph, envs: EnvironmentSet) -> BiasVector:
    """BP biases ``m(x=0) - m(x=1)`` for the variable nodes of a k-SAT
    tensor factor graph, ordered by variable index."""
    xs = sorted(n for n, nd in graph.nodes.items() if nd.kind == "variable")
    m = np.array([variable_marginal(graph, envs, x)[0] for x in xs]).reshape(-1, 2)
    return BiasVector(m[:, 0].copy(), m[:, 1].copy())


def sat_bp_biases(instance: CnfInstance, nuhat) -> BiasVector:
    """:func:`bp_biases` from the flat clause -> variable message array."""
    m = sat_marginals(instance, nuhat)
    return BiasVector(m[:, 0].copy(), m[:, 1].copy())
