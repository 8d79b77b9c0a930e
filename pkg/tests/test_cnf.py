import itertools
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavity_tn.cnf import (CONTRADICTION, CnfInstance, DimacsError, Incidence, energy,
                           parse_dimacs, random_ksat, simplify, unit_propagate, write_dimacs)

PATH = CnfInstance(3, ((1, 2), (-2, 3)))


# DIMACS


def test_parse_basic():
    inst = parse_dimacs("p cnf 3 2\n1 -2 0\n2 3 0")
    assert inst.num_vars == 3
    assert inst.clauses == ((1, -2), (2, 3))


def test_parse_comment_and_unit_clause():
    inst = parse_dimacs("c comment\np cnf 1 1\n1 0")
    assert inst.num_vars == 1 and inst.clauses == ((1,),)


def test_parse_stream_and_multiline_clause():
    inst = parse_dimacs(io.StringIO("p cnf 4 2\n1 2\n 3 0 -4\n0\n"))
    assert inst.clauses == ((1, 2, 3), (-4,))


@pytest.mark.parametrize("text,line", [
    ("p cnf 2 1\n1 1 0", 2),
    ("1 2 0\n", 1),
    ("p cnf 2 1\n1 3 0", 2),
    ("p cnf 2 2\n1 2 0", 0),
    ("p cnf 2 1\n1 x 0", 2),
    ("p dnf 2 1\n1 0", 1),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(DimacsError) as exc:
        parse_dimacs(text)
    assert exc.value.line == line


def test_parse_missing_header():
    with pytest.raises(DimacsError, match="header"):
        parse_dimacs("c nothing here\n")


def test_write_round_trips():
    assert parse_dimacs(write_dimacs(PATH)) == PATH


def test_write_empty_formula():
    assert write_dimacs(CnfInstance(4, ())).splitlines()[0] == "p cnf 4 0"
    assert parse_dimacs(write_dimacs(CnfInstance(4, ()))) == CnfInstance(4, ())


def test_random_instance_round_trips():
    inst = random_ksat(20, 80, 3, 1)
    assert parse_dimacs(write_dimacs(inst)) == inst


# instance invariants


@pytest.mark.parametrize("clauses", [((),), ((1, -1),), ((4,),), ((0,),)])
def test_instance_validation(clauses):
    with pytest.raises(ValueError):
        CnfInstance(3, clauses)


def test_incidence_tables():
    inc = PATH.incidence
    assert isinstance(inc, Incidence)
    assert inc.num_edges == 4
    assert list(inc.degrees()) == [1, 2, 1]
    assert list(inc.edge_neg[inc.var_edges(1)]) == [False, True]
    for e in range(inc.num_edges):
        assert inc.edge_index[(int(inc.edge_var[e]), int(inc.edge_clause[e]))] == e


# random generation


def test_random_structure():
    inst = random_ksat(5, 3, 3, 7)
    assert inst.num_clauses == 3
    assert all(len({abs(x) for x in c}) == 3 for c in inst.clauses)


def test_random_empty():
    inst = random_ksat(10, 0, 3, 0)
    assert inst.num_clauses == 0
    assert energy(inst, np.zeros(10, bool)) == 0


def test_random_deterministic():
    assert random_ksat(50, 200, 3, 11) == random_ksat(50, 200, 3, 11)
    assert random_ksat(50, 200, 3, 11) != random_ksat(50, 200, 3, 12)


def test_random_large_n_path_distinct():
    inst = random_ksat(10_000, 500, 3, 2)
    assert all(len({abs(x) for x in c}) == 3 for c in inst.clauses)


def test_random_k_exceeds_n():
    with pytest.raises(ValueError):
        random_ksat(2, 1, 3, 0)


def test_random_occupancy_statistics():
    # expected occurrences per variable per clause is k/n; check within 3 sigma
    n, m, k, seeds = 10, 50, 3, 200
    counts = np.zeros(n)
    negs = 0
    for s in range(seeds):
        for c in random_ksat(n, m, k, s).clauses:
            for x in c:
                counts[abs(x) - 1] += 1
                negs += x < 0
    trials = m * seeds
    p = k / n
    sigma = np.sqrt(trials * p * (1 - p))
    assert np.all(np.abs(counts - trials * p) < 3 * sigma)
    lits = trials * k
    assert abs(negs - lits / 2) < 3 * np.sqrt(lits / 4)


# energy


def test_energy_examples():
    assert energy(CnfInstance(3, ((1, -2), (2, 3))), [1, 1, 0]) == 0
    assert energy(CnfInstance(3, ((1, 2, 3),)), [0, 0, 0]) == 1
    assert energy(CnfInstance(3, ()), [1, 0, 1]) == 0


def test_energy_length_check():
    with pytest.raises(ValueError):
        energy(PATH, [1, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 40), st.integers(1, 3), st.integers(0, 2**31))
def test_energy_matches_per_clause_reference(n, m, k, seed):
    k = min(k, n)
    inst = random_ksat(n, m, k, seed)
    x = np.random.default_rng(seed).random(n) < 0.5
    ref = sum(all((x[abs(l) - 1]) != (l > 0) for l in c) for c in inst.clauses)
    assert energy(inst, x) == ref


# simplification


def test_simplify_example():
    out = simplify(PATH, 2, True)
    assert out.clauses == ((3,),)
    assert out.fixed == {2: True}


def test_simplify_contradiction():
    assert simplify(CnfInstance(1, ((1,),)), 1, False) is CONTRADICTION
    assert not CONTRADICTION


def test_simplify_unused_variable():
    inst = CnfInstance(3, ((1, 2),))
    out = simplify(inst, 3, True)
    assert out.clauses == inst.clauses and out.fixed == {3: True}


def test_simplify_refixing_rejected():
    with pytest.raises(ValueError):
        simplify(simplify(PATH, 1, True), 1, False)


def _solutions(inst):
    n = inst.num_vars
    return {x for x in itertools.product((0, 1), repeat=n) if energy(inst, x) == 0}


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 10), st.integers(0, 30), st.integers(0, 2**31), st.data())
def test_simplify_preserves_solution_set(n, m, seed, data):
    inst = random_ksat(n, m, 3, seed)
    var = data.draw(st.integers(1, n))
    val = data.draw(st.booleans())
    out = simplify(inst, var, val)
    expected = {x for x in _solutions(inst) if x[var - 1] == val}
    if out is CONTRADICTION:
        assert not expected
        return
    got = {x for x in _solutions(out) if x[var - 1] == val}
    assert got == expected


def test_unit_propagate_chain():
    inst = CnfInstance(3, ((1,), (-1, 2), (-2, 3, 1), (-2, -3)))
    out, kept = unit_propagate(inst)
    assert out.fixed == {1: True, 2: True, 3: False}
    assert out.clauses == () and kept == []


def test_unit_propagate_conflict():
    out, _ = unit_propagate(CnfInstance(1, ((1,), (-1,))))
    assert out is CONTRADICTION
