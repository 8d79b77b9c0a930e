"""Tensorized belief propagation on tensor factor graphs.

Environments live on directed edges ``(source node, target node)`` and are
L1-normalized. A sweep visits the bonds in ``graph.edges`` order and, for
each bond ``(u, v)``, recomputes ``u -> v`` then ``v -> u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from . import _kernels
from .cnf import CnfInstance
from .graph import TensorFactorGraph, clause_node, var_node
from .tensor import Tensor, contract, stack_by_degree

__all__ = [
    "BpConfig",
    "BpReport",
    "SatBpReport",
    "EnvironmentSet",
    "ZeroMessageError",
    "ContradictionError",
    "LocalMarginals",
    "init_environments",
    "update_environment",
    "bp_sweep",
    "run_bp",
    "variable_marginal",
    "bond_marginal",
    "region_marginal",
    "local_marginals",
    "bethe_free_entropy",
    "bethe_free_entropy_from_marginals",
    "VectorizedPlan",
    "prepare_vectorized",
    "stack_environments",
    "unstack_environments",
    "vectorized_sweep",
    "run_bp_vectorized",
    "run_sat_bp",
    "sat_environments",
    "sat_marginals",
]

EnvironmentSet = Dict[tuple, np.ndarray]

SCHEDULES = ("in_place", "two_phase")
INITS = ("uniform", "random")


class ZeroMessageError(ArithmeticError):
    """An update produced the all-zero vector: no consistent local state."""

    def __init__(self, edge=None):
        super().__init__(f"zero message on {edge!r}")
        self.edge = edge


class ContradictionError(ArithmeticError):
    """A local partition value is not positive."""


@dataclass(frozen=True)
class BpConfig:
    """Message-passing parameters.

    Attributes
    ----------
    tolerance : float
        Convergence threshold on the largest L1 change of any environment
        during one sweep.
    max_iterations : int
        Sweep budget.
    schedule : {"in_place", "two_phase"}
        ``in_place`` lets later updates in a sweep read earlier ones;
        ``two_phase`` reads only the previous iterate.
    damping : float
        ``new = (1 - damping) * new + damping * old``, in ``[0, 1)``.
    seed : int
        Seed for random initialization.
    init : {"uniform", "random"}
    """

    tolerance: float = 1e-3
    max_iterations: int = 1000
    schedule: str = "in_place"
    damping: float = 0.0
    seed: int = 0
    init: str = "uniform"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")


@dataclass
class BpReport:
    status: str
    iterations: int
    final_delta: float
    environments: EnvironmentSet | None
    contradiction: bool = False

    @property
    def converged(self) -> bool:
        return self.status == "SUCCESS"


# ---------------------------------------------------------------------- #
# initialization and single updates


def _normalize(v):
    return v / v.sum()


def init_environments(graph: TensorFactorGraph, config: BpConfig = BpConfig()) -> EnvironmentSet:
    """One normalized vector per directed edge, in sweep order.

    ``random`` draws ``rng.random(extent)`` per directed edge from
    ``numpy.random.default_rng(config.seed)``.
    """
    rng = np.random.default_rng(config.seed)
    envs = {}
    for s, n in graph.directed_edges():
        ext = graph.extent(graph.edge_between(s, n))
        if config.init == "uniform":
            envs[(s, n)] = np.full(ext, 1.0 / ext)
        else:
            envs[(s, n)] = _normalize(rng.random(ext))
    return envs


def _raw_update(graph, envs, s, n):
    e = graph.edge_between(s, n)
    ins = []
    for f in graph.adjacency[s]:
        if f != e:
            ins.append(Tensor((f,), envs[(graph.other(f, s), s)]))
    return contract([graph.nodes[s].absorbed, *ins], (e,)).to_dense()


def update_environment(graph: TensorFactorGraph, envs: EnvironmentSet, edge) -> np.ndarray:
    """Normalized contraction of the source tensor with every incoming
    environment except the one coming back from the target.

    Raises
    ------
    ZeroMessageError
        If the raw contraction is the zero vector.
    """
    s, n = edge
    raw = _raw_update(graph, envs, s, n)
    tot = raw.sum()
    if not tot > 0:
        raise ZeroMessageError(edge)
    return raw / tot


# ---------------------------------------------------------------------- #
# compiled per-edge plan


class _Plan:
    """Per directed edge: how to compute its message from the others.

    Environments are held in a flat list indexed like ``self.dirs``.
    """

    def __init__(self, graph: TensorFactorGraph):
        self.graph = graph
        self.dirs = graph.directed_edges()
        self.index = {d: k for k, d in enumerate(self.dirs)}
        self.steps = []
        for s, n in self.dirs:
            e = graph.edge_between(s, n)
            t = graph.nodes[s].absorbed
            ins = [(self.index[(graph.other(f, s), s)], f) for f in graph.adjacency[s] if f != e]
            pos = {lb: i for i, lb in enumerate(t.labels)}
            src = [k for k, _ in ins]
            if t.is_sparse:
                cols = [t.coords[:, pos[f]] for _, f in ins]
                self.steps.append(("sparse", src, t.values, cols, t.coords[:, pos[e]],
                                   graph.extent(e)))
            else:
                arr = t.to_dense()
                subs = [[pos[f]] for _, f in ins]
                ops = [arr, list(range(t.rank))]
                for sub in subs:
                    ops += [np.empty(arr.shape[sub[0]]), sub]
                ops.append([pos[e]])
                path = (np.einsum_path(*ops, optimize="greedy")[0]
                        if t.rank > 3 else False)
                self.steps.append(("dense", src, arr, subs, pos[e], path, t.rank))

    def raw(self, k, cur):
        step = self.steps[k]
        if step[0] == "sparse":
            _, src, vals, cols, out, ext = step
            w = vals
            for j, c in zip(src, cols):
                w = w * cur[j][c]
            return np.bincount(out, weights=w, minlength=ext)
        _, src, arr, subs, out, path, rank = step
        ops = [arr, list(range(rank))]
        for j, sub in zip(src, subs):
            ops += [cur[j], sub]
        ops.append([out])
        return np.einsum(*ops, optimize=path)

    def sweep(self, cur, schedule, damping):
        """One sweep in place on ``cur``; returns the largest L1 change."""
        read = list(cur) if schedule == "two_phase" else cur
        delta = 0.0
        for k in range(len(self.dirs)):
            raw = self.raw(k, read)
            tot = raw.sum()
            if not tot > 0:
                raise ZeroMessageError(self.dirs[k])
            new = raw / tot
            if damping:
                new = (1.0 - damping) * new + damping * cur[k]
            d = float(np.abs(new - cur[k]).sum())
            if d > delta:
                delta = d
            cur[k] = new
        return delta


def bp_sweep(graph: TensorFactorGraph, envs: EnvironmentSet, *, schedule: str = "in_place",
             damping: float = 0.0) -> tuple[EnvironmentSet, float]:
    """One sweep from ``envs``; returns ``(new environments, largest L1 change)``."""
    plan = _Plan(graph)
    cur = [np.asarray(envs[d], dtype=float) for d in plan.dirs]
    delta = plan.sweep(cur, schedule, damping)
    return dict(zip(plan.dirs, cur)), delta


def run_bp(graph: TensorFactorGraph, config: BpConfig = BpConfig(),
           envs: EnvironmentSet | None = None) -> BpReport:
    """Iterate sweeps until the largest change drops below the tolerance."""
    if envs is None:
        envs = init_environments(graph, config)
    plan = _Plan(graph)
    cur = [np.array(envs[d], dtype=float) for d in plan.dirs]
    if not plan.dirs:
        return BpReport("SUCCESS", 1, 0.0, {})
    delta = math.inf
    for it in range(1, config.max_iterations + 1):
        try:
            delta = plan.sweep(cur, config.schedule, config.damping)
        except ZeroMessageError:
            return BpReport("FAILURE", it, math.inf, dict(zip(plan.dirs, cur)),
                            contradiction=True)
        if delta < config.tolerance:
            return BpReport("SUCCESS", it, delta, dict(zip(plan.dirs, cur)))
    return BpReport("FAILURE", config.max_iterations, delta, dict(zip(plan.dirs, cur)))


# ---------------------------------------------------------------------- #
# marginals and free entropy


def _incoming(graph, envs, node):
    return [Tensor((f,), envs[(graph.other(f, node), node)]) for f in graph.adjacency[node]]


def variable_marginal(graph: TensorFactorGraph, envs: EnvironmentSet, node):
    """Distribution of the node's physical index and its normalizer ``Z``."""
    nd = graph.nodes[node]
    if nd.physical is None:
        raise ValueError(f"node {node!r} has no physical index")
    raw = contract([nd.tensor, *_incoming(graph, envs, node)], (nd.physical,)).to_dense()
    z = float(raw.sum())
    if not z > 0:
        raise ContradictionError(f"zero normalizer at {node!r}")
    return raw / z, z


def bond_marginal(graph: TensorFactorGraph, envs: EnvironmentSet, eid):
    """Normalized product of the two opposing environments and its ``Z``."""
    u, v, _ = graph.edges[eid]
    raw = envs[(u, v)] * envs[(v, u)]
    z = float(raw.sum())
    if not z > 0:
        raise ContradictionError(f"zero normalizer on bond {eid!r}")
    return raw / z, z


def _region_weights(graph, envs, node):
    """Unnormalized node marginal in the open tensor's own storage."""
    t = graph.nodes[node].tensor
    envs_by_label = {f: envs[(graph.other(f, node), node)] for f in graph.adjacency[node]}
    if t.is_sparse:
        w = t.values.copy()
        for i, lb in enumerate(t.labels):
            if lb in envs_by_label:
                w *= envs_by_label[lb][t.coords[:, i]]
        return Tensor(t.labels, extents=t.extents, coords=t.coords, values=w)
    arr = t.to_dense().copy()
    for i, lb in enumerate(t.labels):
        if lb in envs_by_label:
            shape = [1] * t.rank
            shape[i] = t.extents[i]
            arr *= envs_by_label[lb].reshape(shape)
    return Tensor(t.labels, arr)


def region_marginal(graph: TensorFactorGraph, envs: EnvironmentSet, node):
    """Joint marginal of the node's physical and bond indices, with ``Z``."""
    w = _region_weights(graph, envs, node)
    z = float(w.values.sum() if w.is_sparse else w.to_dense().sum())
    if not z > 0:
        raise ContradictionError(f"zero normalizer at {node!r}")
    return w * (1.0 / z), z


@dataclass
class LocalMarginals:
    regions: dict = field(default_factory=dict)
    bonds: dict = field(default_factory=dict)


def local_marginals(graph: TensorFactorGraph, envs: EnvironmentSet) -> LocalMarginals:
    """Region marginals of every node and bond marginals of every edge."""
    out = LocalMarginals()
    for node in graph.nodes:
        out.regions[node] = region_marginal(graph, envs, node)[0]
    for eid in graph.edges:
        out.bonds[eid] = bond_marginal(graph, envs, eid)[0]
    return out


def bethe_free_entropy(graph: TensorFactorGraph, envs: EnvironmentSet) -> float:
    """Sum of log node normalizers minus sum of log bond normalizers."""
    f = 0.0
    for node in graph.nodes:
        z = float(contract([graph.nodes[node].absorbed, *_incoming(graph, envs, node)]).to_dense())
        if not z > 0:
            raise ContradictionError(f"zero normalizer at {node!r}")
        f += math.log(z)
    for eid in graph.edges:
        f -= math.log(bond_marginal(graph, envs, eid)[1])
    return f


def _values_at(t: Tensor, coords: np.ndarray) -> np.ndarray:
    """Entries of ``t`` at the given multi-indices."""
    if not t.is_sparse:
        return t.to_dense()[tuple(coords.T)]
    if len(coords) == 0:
        return np.zeros(0)
    if t.rank == 0:
        return np.full(len(coords), t.values.sum())
    if math.prod(t.extents) < 2**62:
        keys = np.ravel_multi_index(tuple(t.coords.T), t.extents)
        want = np.ravel_multi_index(tuple(coords.T), t.extents)
        pos = np.searchsorted(keys, want)
        pos = np.minimum(pos, len(keys) - 1)
        return np.where(keys[pos] == want, t.values[pos], 0.0)
    table = dict(zip(map(tuple, t.coords), t.values))
    return np.array([table.get(tuple(c), 0.0) for c in coords])


def _xlogx_ratio(m, t):
    keep = m > 0
    return float(np.sum(m[keep] * np.log(m[keep] / t[keep])))


def bethe_free_entropy_from_marginals(graph: TensorFactorGraph, marginals: LocalMarginals) -> float:
    """Free entropy as minus the region relative entropies to the node
    tensors plus the bond entropies' negatives, with ``0 log 0 = 0``."""
    f = 0.0
    for node, m in marginals.regions.items():
        t = graph.nodes[node].tensor.transpose(m.labels)
        if m.is_sparse:
            mv = m.values
            tv = _values_at(t, m.coords)
        else:
            mv = m.to_dense().ravel()
            tv = t.to_dense().ravel()
        if np.any((mv > 0) & ~(tv > 0)):
            raise ContradictionError(f"marginal outside the support of {node!r}")
        f -= _xlogx_ratio(mv, tv)
    for m in marginals.bonds.values():
        keep = m > 0
        f += float(np.sum(m[keep] * np.log(m[keep])))
    return f


# ---------------------------------------------------------------------- #
# stacked (batched) sweeps


@dataclass
class _Batch:
    ids: tuple
    sparse: bool
    body: np.ndarray | tuple
    in_idx: np.ndarray
    out_idx: np.ndarray
    extents: tuple


@dataclass
class VectorizedPlan:
    """Node tensors grouped by signature, with gather/scatter tables.

    ``in_idx[s, k]`` is the row of the stacked environment array holding
    the message into member ``s`` along its ``k``-th bond; ``out_idx[s, k]``
    the row of the message it sends along that bond.
    """

    dirs: list
    extents: np.ndarray
    width: int
    batches: list


def prepare_vectorized(graph: TensorFactorGraph) -> VectorizedPlan:
    dirs = graph.directed_edges()
    index = {d: k for k, d in enumerate(dirs)}
    ext = np.array([graph.extent(graph.edge_between(s, n)) for s, n in dirs], dtype=np.int64)
    width = int(ext.max()) if len(ext) else 1
    members = []
    for node in graph.nodes:
        bonds = graph.adjacency[node]
        if bonds:
            members.append((node, graph.nodes[node].absorbed.transpose(bonds)))
    batches = []
    for b in stack_by_degree(members) if members else []:
        ids = b.member_ids
        rank = len(b.signature)
        in_idx = np.empty((len(ids), rank), dtype=np.int64)
        out_idx = np.empty((len(ids), rank), dtype=np.int64)
        for s, node in enumerate(ids):
            for k, f in enumerate(graph.adjacency[node]):
                other = graph.other(f, node)
                in_idx[s, k] = index[(other, node)]
                out_idx[s, k] = index[(node, other)]
        if b.body.is_sparse:
            body = (b.body.coords, b.body.values)
        else:
            body = b.body.to_dense()
        batches.append(_Batch(ids, b.body.is_sparse, body, in_idx, out_idx,
                              tuple(b.signature)))
    return VectorizedPlan(dirs, ext, width, batches)


def stack_environments(plan: VectorizedPlan, envs: EnvironmentSet) -> np.ndarray:
    """Environments as a zero-padded ``(directed edges, max extent)`` array."""
    arr = np.zeros((len(plan.dirs), plan.width))
    for k, d in enumerate(plan.dirs):
        arr[k, :plan.extents[k]] = envs[d]
    return arr


def unstack_environments(plan: VectorizedPlan, arr: np.ndarray) -> EnvironmentSet:
    return {d: arr[k, :plan.extents[k]].copy() for k, d in enumerate(plan.dirs)}


def _contract_last(r, v):
    """``(S, P, d) x (S, d) -> (S, P)``."""
    out = r[:, :, 0] * v[:, None, 0]
    for c in range(1, v.shape[1]):
        out += r[:, :, c] * v[:, None, c]
    return out


def _contract_first(r, v):
    """``(S, d, Q) x (S, d) -> (S, Q)``."""
    out = r[:, 0, :] * v[:, 0, None]
    for c in range(1, v.shape[1]):
        out += r[:, c, :] * v[:, c, None]
    return out


def _suffix_contractions(body, vecs):
    """``suffix[j]``: ``body`` with slots ``j+1 ..`` contracted, shape ``(S, d_0..d_j)``."""
    n = body.shape[0]
    rank = len(vecs)
    suffix = [None] * rank
    cur = body
    suffix[rank - 1] = cur
    for j in range(rank - 1, 0, -1):
        shape = cur.shape[1:-1]
        cur = _contract_last(cur.reshape(n, -1, cur.shape[-1]), vecs[j]).reshape(n, *shape)
        suffix[j - 1] = cur
    return suffix


def _slot_message(partial, vecs, j):
    """Contract slots ``0 .. j-1`` of ``partial`` (shape ``(S, d_0..d_j)``)."""
    n = partial.shape[0]
    cur = partial
    for k in range(j):
        rest = cur.shape[2:]
        cur = _contract_first(cur.reshape(n, cur.shape[1], -1), vecs[k]).reshape(n, *rest)
    return cur.reshape(n, -1)


def vectorized_sweep(plan: VectorizedPlan, arr: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """One sweep where every message reads the previous iterate ``arr``.

    Each (batch, output slot) pair is a single batched contraction.
    """
    new = np.zeros_like(arr)
    for b in plan.batches:
        rank = len(b.extents)
        n_mem = len(b.ids)
        gathered = [arr[b.in_idx[:, k], :b.extents[k]] for k in range(rank)]
        if not b.sparse:
            suffix = _suffix_contractions(b.body, gathered)
        for j in range(rank):
            if b.sparse:
                coords, vals = b.body
                w = vals.copy()
                for k in range(rank):
                    if k != j:
                        w *= gathered[k][coords[:, 0], coords[:, k + 1]]
                flat = coords[:, 0] * b.extents[j] + coords[:, j + 1]
                raw = np.bincount(flat, weights=w, minlength=n_mem * b.extents[j])
                raw = raw.reshape(n_mem, b.extents[j])
            else:
                raw = _slot_message(suffix[j], gathered, j)
            tot = raw.sum(axis=1)
            if not np.all(tot > 0):
                bad = int(np.argmin(tot > 0))
                raise ZeroMessageError(plan.dirs[b.out_idx[bad, j]])
            new[b.out_idx[:, j], :b.extents[j]] = raw / tot[:, None]
    if damping:
        new = (1.0 - damping) * new + damping * arr
    return new


def run_bp_vectorized(graph: TensorFactorGraph, config: BpConfig = BpConfig(),
                      envs: EnvironmentSet | None = None) -> BpReport:
    """Two-phase BP driven by :func:`vectorized_sweep`."""
    plan = prepare_vectorized(graph)
    if envs is None:
        envs = init_environments(graph, config)
    arr = stack_environments(plan, envs)
    if not plan.dirs:
        return BpReport("SUCCESS", 1, 0.0, {})
    delta = math.inf
    for it in range(1, config.max_iterations + 1):
        try:
            new = vectorized_sweep(plan, arr, config.damping)
        except ZeroMessageError:
            return BpReport("FAILURE", it, math.inf, unstack_environments(plan, arr), True)
        delta = float(np.abs(new - arr).sum(axis=1).max())
        arr = new
        if delta < config.tolerance:
            return BpReport("SUCCESS", it, delta, unstack_environments(plan, arr))
    return BpReport("FAILURE", config.max_iterations, delta, unstack_environments(plan, arr))


# ---------------------------------------------------------------------- #
# k-SAT fast path over flat message arrays


@dataclass
class SatBpReport(BpReport):
    """BP report carrying the raw message arrays.

    ``nu[e]`` is the variable -> clause message on edge ``e`` and
    ``nuhat[e]`` the clause -> variable one; column 0/1 is false/true.
    """

    nu: np.ndarray | None = None
    nuhat: np.ndarray | None = None


def _sat_init(inc, config):
    e = inc.num_edges
    if config.init == "uniform":
        return np.full((e, 2), 0.5), np.full((e, 2), 0.5)
    # same draws, in the same order, as init_environments on build_tfg
    r = np.random.default_rng(config.seed).random((2 * e, 2))
    r /= r.sum(axis=1, keepdims=True)
    return r[0::2].copy(), r[1::2].copy()


def run_sat_bp(instance: CnfInstance, config: BpConfig = BpConfig(), warm=None) -> SatBpReport:
    """BP on the k-SAT tensor factor graph using compiled sweeps.

    Follows the same sweep order, damping and convergence rule as
    :func:`run_bp` on ``build_tfg(instance)``. ``warm`` is an optional
    ``(nu, nuhat)`` pair of starting messages.
    """
    inc = instance.incidence
    if warm is None:
        nu, nuhat = _sat_init(inc, config)
    else:
        nu = np.array(warm[0], dtype=float)
        nuhat = np.array(warm[1], dtype=float)
    if inc.num_edges == 0:
        return SatBpReport("SUCCESS", 1, 0.0, None, nu=nu, nuhat=nuhat)
    status, it, delta = _kernels.sat_bp_sweeps(
        inc.var_ptr, inc.clause_ptr, inc.clause_edges, inc.edge_var, inc.edge_clause,
        inc.edge_neg, nu, nuhat, float(config.tolerance), int(config.max_iterations),
        float(config.damping), config.schedule == "two_phase")
    if status == _kernels.CONVERGED:
        return SatBpReport("SUCCESS", int(it), float(delta), None, nu=nu, nuhat=nuhat)
    if status == _kernels.ZERO:
        return SatBpReport("FAILURE", int(it), math.inf, None, True, nu=nu, nuhat=nuhat)
    return SatBpReport("FAILURE", int(it), float(delta), None, nu=nu, nuhat=nuhat)


def sat_environments(instance: CnfInstance, nu, nuhat) -> EnvironmentSet:
    """Message arrays as environments keyed for ``build_tfg(instance)``."""
    inc = instance.incidence
    envs = {}
    for e in range(inc.num_edges):
        x, c = var_node(int(inc.edge_var[e])), clause_node(int(inc.edge_clause[e]))
        envs[(x, c)] = np.array(nu[e], dtype=float)
        envs[(c, x)] = np.array(nuhat[e], dtype=float)
    return envs


def sat_marginals(instance: CnfInstance, nuhat) -> np.ndarray:
    """``(N, 2)`` variable marginals from clause -> variable messages.

    Raises
    ------
    ContradictionError
        If some variable receives messages with no common support.
    """
    inc = instance.incidence
    logs = np.zeros((instance.num_vars, 2))
    with np.errstate(divide="ignore"):
        np.add.at(logs, inc.edge_var, np.log(np.asarray(nuhat)))
    top = logs.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise ContradictionError("variable with contradictory incoming messages")
    logs -= top
    p = np.exp(logs)
    return p / p.sum(axis=1, keepdims=True)
