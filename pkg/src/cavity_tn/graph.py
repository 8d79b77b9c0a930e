"""Tensor factor graphs: the generic container, k-SAT constructions, and
the auxiliary network whose tensorized BP updates are Survey Propagation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Mapping

import numpy as np

from .cnf import CnfInstance
from .tensor import Tensor, delta_tensor

__all__ = [
    "Node",
    "TensorFactorGraph",
    "sat_factor_tensor",
    "build_tfg",
    "build_sp_tfg",
    "classify_neighborhoods",
    "var_node",
    "clause_node",
    "phys_label",
    "SP_BOND",
    "random_tree_network",
    "random_loopy_network",
    "random_regular_network",
    "lattice_network",
]

KINDS = ("variable", "factor", "tensor")

# slots of the 5-dim SP bond: (Qhat, 1 - Qhat, QU, QS, Qstar)
SP_BOND = 5
HAT, NOT_HAT, QU, QS, QSTAR = range(SP_BOND)


def var_node(i: int):
    return ("x", i)


def clause_node(a: int):
    return ("c", a)


def phys_label(node):
    return ("phys", node)


@dataclass(frozen=True)
class Node:
    """A node of a tensor factor graph.

    ``tensor`` is the node's tensor in open form: its labels are the
    incident edge ids plus, optionally, the ``physical`` label.
    """

    kind: str
    tensor: Tensor
    physical: Hashable | None = None

    @cached_property
    def absorbed(self) -> Tensor:
        """The tensor with the physical index summed out."""
        if self.physical is None:
            return self.tensor
        return self.tensor.sum_labels([self.physical])


@dataclass(frozen=True, eq=False)
class TensorFactorGraph:
    """Nodes carrying tensors, joined by bonds.

    Attributes
    ----------
    nodes : dict
        ``node id -> Node``.
    edges : dict
        ``edge id -> (u, v, extent)``. Edge ids are the bond labels used in
        the node tensors; iteration order of ``edges`` is the sweep order.
    adjacency : dict
        ``node id -> tuple of edge ids`` in the order they appear among the
        node tensor's labels.
    directional : dict
        Optional per-directed-edge update tensors ``(s, n) -> Tensor`` whose
        first label is the output bond. Empty for ordinary graphs.
    """

    nodes: Mapping
    edges: Mapping
    adjacency: Mapping = field(default=None)
    directional: Mapping = field(default_factory=dict)

    def __post_init__(self):
        adj = {n: [] for n in self.nodes}
        for eid, (u, v, ext) in self.edges.items():
            if u == v:
                raise ValueError(f"edge {eid!r} is a self loop")
            for n in (u, v):
                if n not in self.nodes:
                    raise ValueError(f"edge {eid!r} references unknown node {n!r}")
            ku, kv = self.nodes[u].kind, self.nodes[v].kind
            if "tensor" not in (ku, kv) and ku == kv:
                raise ValueError(f"edge {eid!r} joins two {ku} nodes")
            for n in (u, v):
                t = self.nodes[n].tensor
                if eid not in t.labels:
                    raise ValueError(f"node {n!r} tensor lacks bond label {eid!r}")
                if t.extent_of(eid) != ext:
                    raise ValueError(f"bond {eid!r} extent mismatch at {n!r}")
            adj[u].append(eid)
            adj[v].append(eid)
        for n, node in self.nodes.items():
            if node.kind not in KINDS:
                raise ValueError(f"unknown node kind {node.kind!r}")
            bonds = [lb for lb in node.tensor.labels if lb != node.physical]
            if set(bonds) != set(adj[n]):
                raise ValueError(f"node {n!r} labels do not match its edges")
            adj[n] = tuple(bonds)
        if self.adjacency is None:
            object.__setattr__(self, "adjacency", adj)
        else:
            given = {n: tuple(e) for n, e in self.adjacency.items()}
            if given != adj:
                raise ValueError("adjacency does not match tensor label order")
            object.__setattr__(self, "adjacency", given)

    # ------------------------------------------------------------------ #

    def other(self, eid, node):
        u, v, _ = self.edges[eid]
        return v if node == u else u

    def extent(self, eid) -> int:
        return self.edges[eid][2]

    def neighbors(self, node) -> list:
        return [self.other(e, node) for e in self.adjacency[node]]

    def edge_between(self, s, n):
        return self._edge_lookup[(s, n)]

    @cached_property
    def _edge_lookup(self):
        out = {}
        for eid, (u, v, _) in self.edges.items():
            out[(u, v)] = eid
            out[(v, u)] = eid
        return out

    def directed_edges(self) -> list[tuple]:
        """All directed edges in sweep order: per edge, ``u -> v`` then ``v -> u``."""
        out = []
        for u, v, _ in self.edges.values():
            out += [(u, v), (v, u)]
        return out

    def is_tree(self) -> bool:
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from((u, v) for u, v, _ in self.edges.values())
        return nx.is_forest(g)


# ---------------------------------------------------------------------- #
# k-SAT networks


def sat_factor_tensor(clause, labels=None) -> Tensor:
    """All ones except a single 0 at the configuration violating ``clause``.

    Index ``k`` runs over the value (0 = false, 1 = true) of the ``k``-th
    literal's variable. Labels default to the 0-based variable indices.
    """
    clause = tuple(clause)
    if not clause:
        raise ValueError("clause must have at least one literal")
    if labels is None:
        labels = tuple(abs(x) - 1 for x in clause)
    arr = np.ones((2,) * len(clause))
    arr[tuple(1 if x < 0 else 0 for x in clause)] = 0.0
    return Tensor(labels, arr)


def build_tfg(instance: CnfInstance) -> TensorFactorGraph:
    """Tensor network of the uniform measure over SAT assignments.

    Variables become copy tensors with an open physical index; clauses
    become :func:`sat_factor_tensor`. Edge ids follow the variable-major
    numbering of :class:`~cavity_tn.cnf.Incidence`.
    """
    inc = instance.incidence
    nodes, edges = {}, {}
    for e in range(inc.num_edges):
        edges[e] = (var_node(int(inc.edge_var[e])), clause_node(int(inc.edge_clause[e])), 2)
    for i in range(instance.num_vars):
        x = var_node(i)
        labels = (phys_label(x), *range(inc.var_ptr[i], inc.var_ptr[i + 1]))
        if len(labels) == 1:
            t = Tensor(labels, np.ones(2))
        else:
            t = delta_tensor(2, len(labels), labels)
        nodes[x] = Node("variable", t, phys_label(x))
    for a, clause in enumerate(instance.clauses):
        eids = tuple(int(e) for e in inc.clause_edge_ids(a))
        nodes[clause_node(a)] = Node("factor", sat_factor_tensor(clause, eids))
    return TensorFactorGraph(nodes, edges)


def classify_neighborhoods(instance: CnfInstance) -> dict[tuple[int, int], tuple[tuple, tuple]]:
    """``(variable, clause) -> (S, U)``, all 0-based.

    ``S`` holds the other clauses where the variable appears with the same
    sign as in ``clause``, ``U`` those with the opposite sign.
    """
    inc = instance.incidence
    out = {}
    for i in range(instance.num_vars):
        es = inc.var_edges(i)
        for e in es:
            same = tuple(int(inc.edge_clause[f]) for f in es
                         if f != e and inc.edge_neg[f] == inc.edge_neg[e])
            opp = tuple(int(inc.edge_clause[f]) for f in es
                        if inc.edge_neg[f] != inc.edge_neg[e])
            out[(i, int(inc.edge_clause[e]))] = (same, opp)
    return out


def _sp_clause_update_tensor(out_edge, in_edges) -> Tensor:
    """Clause -> variable SP tensor.

    Output slot HAT collects the single all-QU input entry (the product of
    the QU's); slot NOT_HAT collects every other input entry of the
    variable-to-clause subspace, which sums to one minus that product.
    """
    k = len(in_edges)
    rows = []
    for combo in itertools.product((QU, QS, QSTAR), repeat=k):
        out = HAT if all(c == QU for c in combo) else NOT_HAT
        rows.append((out, *combo))
    return Tensor((out_edge, *in_edges), extents=(SP_BOND,) * (k + 1),
                  coords=np.array(rows, dtype=np.int64).reshape(-1, k + 1),
                  values=np.ones(len(rows)))


def _sp_variable_update_tensor(out_edge, s_edges, u_edges) -> Tensor:
    """Variable -> clause SP tensor over inputs from the S and U clauses.

    The all-NOT_HAT entry over a set selects the product of (1 - Qhat);
    the complement (every other {HAT, NOT_HAT} entry) selects one minus it.
    """
    ns, nu = len(s_edges), len(u_edges)
    rows = []
    all_s = (NOT_HAT,) * ns
    all_u = (NOT_HAT,) * nu
    for cu in itertools.product((HAT, NOT_HAT), repeat=nu):
        if cu != all_u:
            rows.append((QU, *all_s, *cu))
    for cs in itertools.product((HAT, NOT_HAT), repeat=ns):
        if cs != all_s:
            rows.append((QS, *cs, *all_u))
    rows.append((QSTAR, *all_s, *all_u))
    return Tensor((out_edge, *s_edges, *u_edges), extents=(SP_BOND,) * (1 + ns + nu),
                  coords=np.array(rows, dtype=np.int64).reshape(-1, 1 + ns + nu),
                  values=np.ones(len(rows)))


def build_sp_tfg(instance: CnfInstance) -> TensorFactorGraph:
    """Auxiliary network on the same topology as :func:`build_tfg` whose
    plain tensorized BP updates reproduce Survey Propagation.

    Every bond has extent 5. Clause-to-variable environments live in slots
    (HAT, NOT_HAT) and variable-to-clause ones in (QU, QS, QSTAR), so the
    per-direction update tensors of a node have disjoint supports and add
    up to a single node tensor. Both are kept: ``directional[(s, n)]``
    holds the update tensor for ``s -> n`` (output bond first).
    """
    inc = instance.incidence
    nbhd = classify_neighborhoods(instance)
    nodes, edges, directional = {}, {}, {}
    for e in range(inc.num_edges):
        edges[e] = (var_node(int(inc.edge_var[e])),
                    clause_node(int(inc.edge_clause[e])), SP_BOND)

    for i in range(instance.num_vars):
        x = var_node(i)
        es = [int(e) for e in inc.var_edges(i)]
        parts = []
        for e in es:
            a = int(inc.edge_clause[e])
            s_set, u_set = nbhd[(i, a)]
            s_edges = [inc.edge_index[(i, b)] for b in s_set]
            u_edges = [inc.edge_index[(i, b)] for b in u_set]
            t = _sp_variable_update_tensor(e, s_edges, u_edges)
            directional[(x, clause_node(a))] = t
            parts.append(t.transpose(es))
        nodes[x] = Node("variable", _sum_disjoint(es, parts))

    for a in range(instance.num_clauses):
        c = clause_node(a)
        es = [int(e) for e in inc.clause_edge_ids(a)]
        parts = []
        for e in es:
            t = _sp_clause_update_tensor(e, [f for f in es if f != e])
            directional[(c, var_node(int(inc.edge_var[e])))] = t
            parts.append(t.transpose(es))
        nodes[c] = Node("factor", _sum_disjoint(es, parts))

    return TensorFactorGraph(nodes, edges, directional=directional)


def _sum_disjoint(labels, parts):
    if not parts:
        return Tensor.scalar(1.0)
    return Tensor(labels, extents=(SP_BOND,) * len(labels),
                  coords=np.vstack([p.coords for p in parts]),
                  values=np.concatenate([p.values for p in parts]))


# ---------------------------------------------------------------------- #
# synthetic networks for tests and benchmarks


def _random_tensor(rng, labels, extents, low=0.05):
    return Tensor(labels, rng.uniform(low, 1.0, size=extents))


def random_tree_network(n_nodes: int, seed, *, max_extent: int = 3,
                        phys_extent: int = 2, copy_variables: bool = False,
                        low: float = 0.05) -> TensorFactorGraph:
    """Random tree of ``n_nodes`` tensors with strictly positive entries.

    Nodes alternate variable/factor kinds by depth so the tree is a valid
    bipartite tensor factor graph. Every node has an open physical index.
    With ``copy_variables`` the variable nodes are copy tensors (a genuine
    factor graph) and factor nodes carry no physical index.
    """
    rng = np.random.default_rng(seed)
    parent = [None] + [int(rng.integers(0, i)) for i in range(1, n_nodes)]
    depth = [0] * n_nodes
    for i in range(1, n_nodes):
        depth[i] = depth[parent[i]] + 1
    kind = ["variable" if d % 2 == 0 else "factor" for d in depth]
    if copy_variables:
        edge_ext = [None] + [phys_extent] * (n_nodes - 1)
    else:
        edge_ext = [None] + [int(rng.integers(2, max_extent + 1)) for _ in range(1, n_nodes)]

    incident = {i: [] for i in range(n_nodes)}
    edges = {}
    for i in range(1, n_nodes):
        eid = i - 1
        edges[eid] = (parent[i], i, edge_ext[i])
        incident[parent[i]].append(eid)
        incident[i].append(eid)

    nodes = {}
    for i in range(n_nodes):
        bonds = incident[i]
        ph = phys_label(i)
        if copy_variables and kind[i] == "variable":
            labels = (ph, *bonds)
            t = (delta_tensor(phys_extent, len(labels), labels) if bonds
                 else Tensor(labels, np.ones(phys_extent)))
            nodes[i] = Node("variable", t, ph)
        elif copy_variables:
            exts = [edges[e][2] for e in bonds]
            nodes[i] = Node("factor", _random_tensor(rng, bonds, exts, low))
        else:
            exts = [phys_extent] + [edges[e][2] for e in bonds]
            nodes[i] = Node(kind[i], _random_tensor(rng, (ph, *bonds), exts, low), ph)
    return TensorFactorGraph(nodes, edges)


def _network_from_graph(g_edges, n_nodes, rng, bond_extent, phys_extent, low, kind="tensor"):
    incident = {i: [] for i in range(n_nodes)}
    edges = {}
    for eid, (u, v) in enumerate(g_edges):
        edges[eid] = (u, v, bond_extent)
        incident[u].append(eid)
        incident[v].append(eid)
    nodes = {}
    for i in range(n_nodes):
        bonds = incident[i]
        if phys_extent:
            ph = phys_label(i)
            exts = [phys_extent] + [bond_extent] * len(bonds)
            nodes[i] = Node(kind, _random_tensor(rng, (ph, *bonds), exts, low), ph)
        else:
            nodes[i] = Node(kind, _random_tensor(rng, bonds, [bond_extent] * len(bonds), low))
    return TensorFactorGraph(nodes, edges)


def random_regular_network(n_nodes: int, degree: int, seed, *, bond_extent: int = 2,
                           phys_extent: int = 0, low: float = 0.05) -> TensorFactorGraph:
    """Random ``degree``-regular graph of positive tensors."""
    import networkx as nx

    g = nx.random_regular_graph(degree, n_nodes, seed=int(seed))
    rng = np.random.default_rng(seed)
    return _network_from_graph(sorted(tuple(sorted(e)) for e in g.edges()),
                               n_nodes, rng, bond_extent, phys_extent, low)


def random_loopy_network(n_nodes: int, extra_edges: int, seed, *, bond_extent: int = 2,
                         phys_extent: int = 2, low: float = 0.5) -> TensorFactorGraph:
    """Random tree plus ``extra_edges`` chords. Entries are drawn from
    ``[low, 1]``; near-uniform tensors keep loopy BP convergent.
    """
    rng = np.random.default_rng(seed)
    es = {(int(rng.integers(0, i)), i) for i in range(1, n_nodes)}
    while len(es) < n_nodes - 1 + extra_edges:
        u, v = sorted(int(x) for x in rng.choice(n_nodes, size=2, replace=False))
        es.add((u, v))
    return _network_from_graph(sorted(es), n_nodes, rng, bond_extent, phys_extent, low)


def lattice_network(L: int, seed, *, bond_extent: int = 2, low: float = 0.05) -> TensorFactorGraph:
    """Open-boundary ``L x L x L`` cubic lattice of positive tensors, no
    physical indices."""
    rng = np.random.default_rng(seed)
    idx = np.arange(L**3).reshape(L, L, L)
    pairs = []
    for axis in range(3):
        a = np.take(idx, range(L - 1), axis=axis).ravel()
        b = np.take(idx, range(1, L), axis=axis).ravel()
        pairs.append(np.stack([a, b], axis=1))
    pairs = np.concatenate(pairs)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    return _network_from_graph([tuple(map(int, p)) for p in pairs], L**3, rng,
                               bond_extent, 0, low)

