"""Compiled sweeps over the flat k-SAT incidence tables.

Every kernel walks edges in variable-major order and, per edge, updates
the variable->clause message before the clause->variable one. Status
codes: 0 converged, 1 iteration budget exhausted, 2 zero message.
"""

import numpy as np
from numba import njit

CONVERGED, EXHAUSTED, ZERO = 0, 1, 2


@njit(cache=True)
def sat_bp_sweeps(var_ptr, clause_ptr, clause_edges, edge_var, edge_clause, edge_neg,
                  nu, nuhat, tol, max_iter, damping, two_phase):
    """BP on the SAT factor graph. ``nu[e]`` is variable->clause, ``nuhat[e]``
    clause->variable; component 0/1 is the variable value false/true."""
    n_vars = len(var_ptr) - 1
    rd_nu = nu
    rd_hat = nuhat
    delta = 0.0
    for it in range(1, max_iter + 1):
        if two_phase:
            rd_nu = nu.copy()
            rd_hat = nuhat.copy()
        delta = 0.0
        for j in range(n_vars):
            for e in range(var_ptr[j], var_ptr[j + 1]):
                # variable -> clause
                m0 = 1.0
                m1 = 1.0
                for f in range(var_ptr[j], var_ptr[j + 1]):
                    if f != e:
                        m0 *= rd_hat[f, 0]
                        m1 *= rd_hat[f, 1]
                s = m0 + m1
                if s <= 0.0:
                    return ZERO, it, delta
                m0 = (1.0 - damping) * m0 / s + damping * nu[e, 0]
                m1 = (1.0 - damping) * m1 / s + damping * nu[e, 1]
                d = abs(m0 - nu[e, 0]) + abs(m1 - nu[e, 1])
                if d > delta:
                    delta = d
                nu[e, 0] = m0
                nu[e, 1] = m1

                # clause -> variable
                a = edge_clause[e]
                total = 1.0
                viol = 1.0
                for q in range(clause_ptr[a], clause_ptr[a + 1]):
                    g = clause_edges[q]
                    if g != e:
                        total *= rd_nu[g, 0] + rd_nu[g, 1]
                        viol *= rd_nu[g, 1] if edge_neg[g] else rd_nu[g, 0]
                # the violating value of this variable loses the all-false term
                if edge_neg[e]:
                    h0 = total
                    h1 = total - viol
                else:
                    h0 = total - viol
                    h1 = total
                s = h0 + h1
                if s <= 0.0:
                    return ZERO, it, delta
                h0 = (1.0 - damping) * h0 / s + damping * nuhat[e, 0]
                h1 = (1.0 - damping) * h1 / s + damping * nuhat[e, 1]
                d = abs(h0 - nuhat[e, 0]) + abs(h1 - nuhat[e, 1])
                if d > delta:
                    delta = d
                nuhat[e, 0] = h0
                nuhat[e, 1] = h1
        if delta < tol:
            return CONVERGED, it, delta
    return EXHAUSTED, max_iter, delta


@njit(cache=True)
def sp_sweeps(var_ptr, clause_ptr, clause_edges, edge_clause, edge_neg,
              qhat, qtri, tol, max_iter, damping, two_phase):
    """Survey propagation. ``qhat[e]`` is clause->variable, ``qtri[e]`` the
    variable->clause triple (QU, QS, Qstar). Distances are L1 on the
    5-slot embedding, so a clause message counts ``2 * |dQhat|``."""
    n_vars = len(var_ptr) - 1
    rd_hat = qhat
    rd_tri = qtri
    delta = 0.0
    for it in range(1, max_iter + 1):
        if two_phase:
            rd_hat = qhat.copy()
            rd_tri = qtri.copy()
        delta = 0.0
        for j in range(n_vars):
            for e in range(var_ptr[j], var_ptr[j + 1]):
                ps = 1.0
                pu = 1.0
                for f in range(var_ptr[j], var_ptr[j + 1]):
                    if f != e:
                        if edge_neg[f] == edge_neg[e]:
                            ps *= 1.0 - rd_hat[f]
                        else:
                            pu *= 1.0 - rd_hat[f]
                u = ps * (1.0 - pu)
                s_ = pu * (1.0 - ps)
                st = ps * pu
                tot = u + s_ + st
                if tot <= 0.0:
                    return ZERO, it, delta
                u = (1.0 - damping) * u / tot + damping * qtri[e, 0]
                s_ = (1.0 - damping) * s_ / tot + damping * qtri[e, 1]
                st = (1.0 - damping) * st / tot + damping * qtri[e, 2]
                d = abs(u - qtri[e, 0]) + abs(s_ - qtri[e, 1]) + abs(st - qtri[e, 2])
                if d > delta:
                    delta = d
                qtri[e, 0] = u
                qtri[e, 1] = s_
                qtri[e, 2] = st

                a = edge_clause[e]
                h = 1.0
                for q in range(clause_ptr[a], clause_ptr[a + 1]):
                    g = clause_edges[q]
                    if g != e:
                        h *= rd_tri[g, 0]
                h = (1.0 - damping) * h + damping * qhat[e]
                d = 2.0 * abs(h - qhat[e])
                if d > delta:
                    delta = d
                qhat[e] = h
        if delta < tol:
            return CONVERGED, it, delta
    return EXHAUSTED, max_iter, delta


# ---------------------------------------------------------------------- #
# WalkSat


@njit(cache=True)
def ws_init(x, clause_ptr, clause_edges, edge_var, edge_neg):
    """Bookkeeping for assignment ``x``: true-literal counts per clause,
    ``make``/``brk`` per variable, and the list of violated clauses."""
    m = len(clause_ptr) - 1
    n = len(x)
    numtrue = np.zeros(m, np.int64)
    make = np.zeros(n, np.int64)
    brk = np.zeros(n, np.int64)
    unsat = np.empty(m, np.int64)
    where = np.full(m, -1, np.int64)
    n_unsat = 0
    for a in range(m):
        last = -1
        for q in range(clause_ptr[a], clause_ptr[a + 1]):
            e = clause_edges[q]
            if x[edge_var[e]] != edge_neg[e]:
                numtrue[a] += 1
                last = edge_var[e]
        if numtrue[a] == 0:
            unsat[n_unsat] = a
            where[a] = n_unsat
            n_unsat += 1
            for q in range(clause_ptr[a], clause_ptr[a + 1]):
                make[edge_var[clause_edges[q]]] += 1
        elif numtrue[a] == 1:
            brk[last] += 1
    return numtrue, make, brk, unsat, where, n_unsat


@njit(cache=True)
def ws_flip(v, x, numtrue, make, brk, unsat, where, n_unsat,
            var_ptr, edge_clause, clause_ptr, clause_edges, edge_var, edge_neg):
    """Flip variable ``v`` and update the bookkeeping; returns ``n_unsat``."""
    x[v] = not x[v]
    for e in range(var_ptr[v], var_ptr[v + 1]):
        a = edge_clause[e]
        now_true = x[v] != edge_neg[e]
        if now_true:
            if numtrue[a] == 0:
                # clause becomes satisfied with v as its only true literal
                k = where[a]
                last = unsat[n_unsat - 1]
                unsat[k] = last
                where[last] = k
                where[a] = -1
                n_unsat -= 1
                for q in range(clause_ptr[a], clause_ptr[a + 1]):
                    make[edge_var[clause_edges[q]]] -= 1
                brk[v] += 1
            elif numtrue[a] == 1:
                for q in range(clause_ptr[a], clause_ptr[a + 1]):
                    g = clause_edges[q]
                    w = edge_var[g]
                    if w != v and x[w] != edge_neg[g]:
                        brk[w] -= 1
                        break
            numtrue[a] += 1
        else:
            if numtrue[a] == 1:
                brk[v] -= 1
                unsat[n_unsat] = a
                where[a] = n_unsat
                n_unsat += 1
                for q in range(clause_ptr[a], clause_ptr[a + 1]):
                    make[edge_var[clause_edges[q]]] += 1
            elif numtrue[a] == 2:
                for q in range(clause_ptr[a], clause_ptr[a + 1]):
                    g = clause_edges[q]
                    w = edge_var[g]
                    if w != v and x[w] != edge_neg[g]:
                        brk[w] += 1
                        break
            numtrue[a] -= 1
    return n_unsat


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def walksat_run(x, var_ptr, edge_clause, clause_ptr, clause_edges, edge_var, edge_neg,
                max_flips, p, restricted):
    """Greedy/random-walk local search; returns ``(solved, flips)``.

    Greedy moves take the variable with the smallest energy change
    ``brk - make`` (over all variables, or only those in violated clauses
    when ``restricted``), breaking ties uniformly at random.
    """
    n = len(x)
    numtrue, make, brk, unsat, where, n_unsat = ws_init(
        x, clause_ptr, clause_edges, edge_var, edge_neg)
    seen = np.zeros(n, np.int64)
    t = 0
    while t < max_flips:
        if n_unsat == 0:
            return True, t
        if np.random.random() < 1.0 - p:
            best = 1 << 40
            v = -1
            ties = 0
            if restricted:
                for k in range(n_unsat):
                    a = unsat[k]
                    for q in range(clause_ptr[a], clause_ptr[a + 1]):
                        i = edge_var[clause_edges[q]]
                        if seen[i] == t + 1:
                            continue
                        seen[i] = t + 1
                        dlt = brk[i] - make[i]
                        if dlt < best:
                            best = dlt
                            v = i
                            ties = 1
                        elif dlt == best:
                            ties += 1
                            if np.random.randint(ties) == 0:
                                v = i
            else:
                for i in range(n):
                    dlt = brk[i] - make[i]
                    if dlt < best:
                        best = dlt
                        v = i
                        ties = 1
                    elif dlt == best:
                        ties += 1
                        if np.random.randint(ties) == 0:
                            v = i
        else:
            a = unsat[np.random.randint(n_unsat)]
            lo = clause_ptr[a]
            v = edge_var[clause_edges[lo + np.random.randint(clause_ptr[a + 1] - lo)]]
        n_unsat = ws_flip(v, x, numtrue, make, brk, unsat, where, n_unsat,
                          var_ptr, edge_clause, clause_ptr, clause_edges, edge_var, edge_neg)
        t += 1
    return n_unsat == 0, t
