"""Brute-force ground truth for small instances and small networks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cnf import CnfInstance
from .graph import TensorFactorGraph

__all__ = [
    "OracleLimitError",
    "ExactSummary",
    "enumerate_assignments",
    "exact_contract",
    "exact_log_contract",
    "exact_marginal",
    "exact_marginals",
    "marginal_distance",
]

ENUMERATION_LIMIT = 26
CONTRACTION_LIMIT = 2**24
_CHUNK = 1 << 20


class OracleLimitError(ValueError):
    """The requested exact computation exceeds the configured size limit."""


@dataclass(frozen=True)
class ExactSummary:
    """Exact statistics of the uniform measure over SAT assignments.

    ``marginals[i] = (P(x_i = 0), P(x_i = 1))``; ``None`` when the
    instance is UNSAT, in which case ``entropy`` is ``-inf``.
    """

    num_vars: int
    count: int
    marginals: np.ndarray | None

    @property
    def satisfiable(self) -> bool:
        return self.count > 0

    @property
    def entropy(self) -> float:
        return math.log(self.count) if self.count else -math.inf

    @property
    def per_variable_entropy(self) -> float:
        return self.entropy / self.num_vars if self.num_vars else 0.0


def enumerate_assignments(instance: CnfInstance, limit: int = ENUMERATION_LIMIT) -> ExactSummary:
    """Scan all ``2**N`` assignments of the instance's clauses.

    Fixed-variable records are ignored: every variable ranges freely, so
    the count matches the full contraction of ``build_tfg(instance)``.

    Raises
    ------
    OracleLimitError
        If ``N`` exceeds ``limit``.
    """
    n = instance.num_vars
    if n > limit:
        raise OracleLimitError(f"N={n} exceeds the enumeration limit {limit}")
    clauses = [(np.array([abs(x) - 1 for x in c], dtype=np.int64),
                np.array([x < 0 for x in c])) for c in instance.clauses]
    # short clauses prune the most, check them first
    clauses.sort(key=lambda c: len(c[0]))
    count = 0
    ones = np.zeros(n, dtype=np.int64)
    total = 1 << n
    for start in range(0, total, _CHUNK):
        alive = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        for var, neg in clauses:
            if not len(alive):
                break
            bits = (alive[:, None] >> var[None, :]) & 1
            alive = alive[np.any(bits.astype(bool) != neg[None, :], axis=1)]
        count += len(alive)
        if len(alive):
            ones += ((alive[:, None] >> np.arange(n)[None, :]) & 1).sum(axis=0)
    if count == 0:
        return ExactSummary(n, 0, None)
    p1 = ones / count
    return ExactSummary(n, int(count), np.stack([1.0 - p1, p1], axis=1))


# ---------------------------------------------------------------------- #
# exact network contraction by variable elimination


def _is_copy(t) -> bool:
    if not t.is_sparse or t.rank == 0 or len(set(t.extents)) != 1:
        return False
    c = t.coords
    return (t.nnz == t.extents[0] and np.all(t.values == 1.0)
            and np.all(c == c[:, :1]))


def _factors(graph, open_physical):
    """Dense factors with copy tensors folded into shared labels.

    A copy tensor forces all its indices equal, so its labels collapse to
    one representative and the tensor is replaced by a vector of ones.
    Returns ``(factors, representative map)``.
    """
    tensors = [node.tensor if open_physical else node.absorbed for node in graph.nodes.values()]
    parent = {}

    def find(x):
        while parent.get(x, x) != x:
            x = parent[x]
        return x

    copies = []
    for t in tensors:
        if _is_copy(t):
            root = find(t.labels[0])
            for lb in t.labels[1:]:
                r = find(lb)
                if r != root:
                    parent[r] = root
            copies.append(t)
    rep = {}
    out = []
    for t in tensors:
        for lb in t.labels:
            rep[lb] = find(lb)
    seen = set()
    for t in tensors:
        if _is_copy(t):
            r = rep[t.labels[0]]
            if r not in seen:
                seen.add(r)
                out.append(((r,), np.ones(t.extents[0])))
            continue
        labels = [rep[lb] for lb in t.labels]
        arr = t.to_dense().astype(float)
        if len(set(labels)) < len(labels):
            # several legs tied to the same copy class: take the diagonal
            uniq = list(dict.fromkeys(labels))
            ids = {lb: i for i, lb in enumerate(uniq)}
            arr = np.einsum(arr, [ids[lb] for lb in labels], [ids[lb] for lb in uniq])
            labels = uniq
        out.append((tuple(labels), arr))
    return out, rep


def _elimination_order(label_sets, extent, limit):
    """Greedy order: repeatedly sum out the label whose merged factor is
    smallest. Works on label sets only."""
    factors = {k: set(ls) for k, ls in enumerate(label_sets)}
    members = {}
    for k, ls in factors.items():
        for lb in ls:
            members.setdefault(lb, set()).add(k)
    pending = set(members)
    order = []
    nxt = len(factors)
    while pending:
        best, best_size = None, None
        for lb in pending:
            merged = set().union(*(factors[k] for k in members[lb]))
            size = math.prod(extent[x] for x in merged)
            if best_size is None or size < best_size or (size == best_size and repr(lb) < repr(best)):
                best, best_size = lb, size
        if best_size > limit:
            raise OracleLimitError(f"intermediate of size {best_size} exceeds {limit}")
        order.append(best)
        pending.discard(best)
        used = members.pop(best)
        merged = set().union(*(factors.pop(k) for k in used)) - {best}
        for lb in merged:
            members[lb] -= used
            members[lb].add(nxt)
        factors[nxt] = merged
        nxt += 1
    return order


def _eliminate(factors, order, keep, rescale):
    """Sum out the labels of ``order`` not in ``keep``; returns
    ``(array over keep, log_scale)``."""
    factors = list(factors)
    log_scale = 0.0
    for lb in order:
        if lb in keep:
            continue
        used = [f for f in factors if lb in f[0]]
        factors = [f for f in factors if lb not in f[0]]
        allx = tuple(dict.fromkeys(x for labels, _ in used for x in labels))
        out_labels = tuple(x for x in allx if x != lb)
        ids = {x: i for i, x in enumerate(allx)}
        args = []
        for labels, arr in used:
            args += [arr, [ids[x] for x in labels]]
        args.append([ids[x] for x in out_labels])
        arr = np.einsum(*args)
        if rescale:
            m = float(np.abs(arr).max()) if arr.size else 0.0
            if m > 0:
                arr = arr / m
                log_scale += math.log(m)
        factors.append((out_labels, arr))
    # outer product of what remains, in keep order
    ids = {lb: i for i, lb in enumerate(keep)}
    args = []
    for labels, arr in factors:
        args += [arr, [ids[x] for x in labels]]
    args.append([ids[x] for x in keep])
    res = np.einsum(*args) if factors else np.array(1.0)
    return res, log_scale


def _prepared(graph, open_physical, limit):
    factors, rep = _factors(graph, open_physical)
    extent = {}
    for labels, arr in factors:
        extent.update(zip(labels, arr.shape))
    order = _elimination_order([f[0] for f in factors], extent, limit)
    return factors, rep, order


def exact_contract(graph: TensorFactorGraph, limit: int = CONTRACTION_LIMIT) -> float:
    """Sum over all bond (and physical) indices of the product of all node
    tensors, by exact elimination in floating point."""
    factors, _, order = _prepared(graph, False, limit)
    res, _ = _eliminate(factors, order, (), rescale=False)
    return float(res)


def exact_log_contract(graph: TensorFactorGraph, limit: int = CONTRACTION_LIMIT) -> float:
    """Natural log of :func:`exact_contract`, rescaling as it goes."""
    factors, _, order = _prepared(graph, False, limit)
    res, log_scale = _eliminate(factors, order, (), rescale=True)
    val = float(res)
    return math.log(val) + log_scale if val > 0 else -math.inf


def exact_marginals(graph: TensorFactorGraph, queries, limit: int = CONTRACTION_LIMIT) -> list:
    """Exact normalized joint distributions, one per tuple of bond/physical
    labels in ``queries``. The elimination order is shared by all queries."""
    factors, rep, order = _prepared(graph, True, limit)
    out = []
    for labels in queries:
        labels = tuple(labels)
        reps = tuple(dict.fromkeys(rep[lb] for lb in labels))
        res, _ = _eliminate(factors, order, reps, rescale=True)
        z = res.sum()
        if not z > 0:
            raise ZeroDivisionError("network contracts to zero")
        res = res / z
        if len(reps) == len(labels):
            out.append(np.transpose(res, [reps.index(rep[lb]) for lb in labels]))
            continue
        # labels sharing a copy class: spread onto the diagonal
        where = [reps.index(rep[lb]) for lb in labels]
        full = np.zeros(tuple(res.shape[w] for w in where))
        for idx in np.ndindex(res.shape):
            full[tuple(idx[w] for w in where)] = res[idx]
        out.append(full)
    return out


def exact_marginal(graph: TensorFactorGraph, labels, limit: int = CONTRACTION_LIMIT) -> np.ndarray:
    """Exact normalized joint distribution of the given bond/physical labels."""
    return exact_marginals(graph, [labels], limit)[0]


def marginal_distance(exact: ExactSummary, estimated) -> float:
    """Mean over variables of half the L1 distance between marginal pairs.

    ``estimated`` is an ``(N, 2)`` array, or ``None`` when the estimator
    declared the instance UNSAT. Two UNSAT verdicts score 0; a verdict
    mismatch scores the maximal distance 1.
    """
    if estimated is None or exact.marginals is None:
        return 0.0 if (estimated is None and exact.marginals is None) else 1.0
    est = np.asarray(estimated, dtype=float)
    if est.shape != exact.marginals.shape:
        raise ValueError(f"shape {est.shape} != {exact.marginals.shape}")
    if est.shape[0] == 0:
        return 0.0
    return float(0.5 * np.abs(est - exact.marginals).sum(axis=1).mean())
