import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavity_tn.cnf import CnfInstance, random_ksat
from cavity_tn.graph import (HAT, NOT_HAT, QS, QSTAR, QU, SP_BOND, Node, TensorFactorGraph,
                             build_sp_tfg, build_tfg, classify_neighborhoods, clause_node,
                             lattice_network, random_loopy_network, random_regular_network,
                             random_tree_network, sat_factor_tensor, var_node)
from cavity_tn.oracle import enumerate_assignments, exact_contract
from cavity_tn.tensor import Tensor

PATH = CnfInstance(3, ((1, 2), (-2, 3)))


def test_sat_factor_three_clause():
    t = sat_factor_tensor((1, 2, 3)).to_dense()
    expected = np.ones((2, 2, 2))
    expected[0, 0, 0] = 0
    np.testing.assert_array_equal(t, expected)


def test_sat_factor_negated_unit():
    np.testing.assert_array_equal(sat_factor_tensor((-1,)).to_dense(), [1.0, 0.0])


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_sat_factor_sum(k):
    rng = np.random.default_rng(k)
    clause = [int(v) * (1 if s else -1) for v, s in
              zip(rng.permutation(10)[:k] + 1, rng.random(k) < 0.5)]
    assert sat_factor_tensor(clause).to_dense().sum() == 2**k - 1


def test_build_tfg_path_structure():
    g = build_tfg(PATH)
    kinds = [n.kind for n in g.nodes.values()]
    assert kinds.count("variable") == 3 and kinds.count("factor") == 2
    assert len(g.edges) == 4
    assert g.is_tree()
    assert g.neighbors(var_node(1)) == [clause_node(0), clause_node(1)]


def test_build_tfg_contractions():
    assert exact_contract(build_tfg(CnfInstance(3, ((1, 2, 3),)))) == 7.0
    assert exact_contract(build_tfg(PATH)) == 4.0


def test_free_variable_node():
    g = build_tfg(CnfInstance(2, ((1,),)))
    free = g.nodes[var_node(1)]
    np.testing.assert_array_equal(free.tensor.to_dense(), [1.0, 1.0])
    assert float(free.absorbed.to_dense()) == 2.0
    assert exact_contract(g) == 2.0


def test_bipartite_and_bond_extents():
    g = build_tfg(random_ksat(30, 90, 3, 5))
    for eid, (u, v, ext) in g.edges.items():
        assert {g.nodes[u].kind, g.nodes[v].kind} == {"variable", "factor"}
        assert g.nodes[u].tensor.extent_of(eid) == ext == g.nodes[v].tensor.extent_of(eid)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 5.0), st.integers(0, 2**31))
def test_contraction_equals_model_count(n, alpha, seed):
    inst = random_ksat(n, int(alpha * n), min(3, n), seed)
    assert exact_contract(build_tfg(inst)) == enumerate_assignments(inst).count


def test_graph_validation():
    a = Node("variable", Tensor(("e",), [1.0, 1.0]))
    b = Node("variable", Tensor(("e",), [1.0, 1.0]))
    with pytest.raises(ValueError, match="two variable"):
        TensorFactorGraph({0: a, 1: b}, {"e": (0, 1, 2)})
    c = Node("factor", Tensor(("e",), [1.0, 1.0, 1.0]))
    with pytest.raises(ValueError, match="extent"):
        TensorFactorGraph({0: a, 1: c}, {"e": (0, 1, 2)})


# neighbourhoods


def test_classify_neighborhoods():
    # variable 1 appears in a(+), b(+), c(-)
    inst = CnfInstance(4, ((1, 2), (1, 3), (-1, 4)))
    nb = classify_neighborhoods(inst)
    assert nb[(0, 0)] == ((1,), (2,))
    assert nb[(0, 2)] == ((), (0, 1))
    assert nb[(1, 0)] == ((), ())


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 30), st.integers(1, 100), st.integers(0, 2**31))
def test_neighborhood_partition(n, m, seed):
    inst = random_ksat(n, m, 3, seed)
    nb = classify_neighborhoods(inst)
    for (i, a), (s, u) in nb.items():
        occurs = {b for b, c in enumerate(inst.clauses) if any(abs(x) == i + 1 for x in c)}
        assert set(s) | set(u) | {a} == occurs
        assert a not in s and a not in u


# SP network


def test_sp_network_shares_topology():
    inst = random_ksat(15, 50, 3, 2)
    g, sp = build_tfg(inst), build_sp_tfg(inst)
    assert set(g.nodes) == set(sp.nodes)
    assert {e: (u, v) for e, (u, v, _) in g.edges.items()} == \
        {e: (u, v) for e, (u, v, _) in sp.edges.items()}
    assert all(ext == SP_BOND for *_, ext in sp.edges.values())


def test_sp_tensors_are_zero_one_and_sparse():
    sp = build_sp_tfg(random_ksat(10, 40, 3, 9))
    for node in sp.nodes.values():
        assert node.tensor.is_sparse
        assert set(np.unique(node.tensor.values)) <= {1.0}
    for t in sp.directional.values():
        assert t.is_sparse and set(np.unique(t.values)) <= {1.0}


def test_sp_clause_tensor_single_hat_entry():
    inst = CnfInstance(3, ((1, 2, 3),))
    sp = build_sp_tfg(inst)
    t = sp.directional[(clause_node(0), var_node(0))]
    hat = t.coords[:, 0] == HAT
    assert hat.sum() == 1
    assert tuple(t.coords[hat][0, 1:]) == (QU, QU)
    # NOT_HAT collects all other combinations of the QU/QS/QSTAR slots
    assert (t.coords[:, 0] == NOT_HAT).sum() == 3**2 - 1


def test_sp_isolated_variable_tensor_is_qstar():
    inst = CnfInstance(3, ((1, 2, 3),))
    t = build_sp_tfg(inst).directional[(var_node(0), clause_node(0))]
    assert t.rank == 1
    np.testing.assert_array_equal(t.to_dense(), np.eye(SP_BOND)[QSTAR])


def test_sp_node_tensor_sums_directional_parts():
    inst = random_ksat(8, 20, 3, 4)
    sp = build_sp_tfg(inst)
    for nid, node in sp.nodes.items():
        parts = [t for (s, _), t in sp.directional.items() if s == nid]
        total = sum(t.transpose(node.tensor.labels).to_dense() for t in parts)
        np.testing.assert_array_equal(node.tensor.to_dense(), total)


# synthetic networks


@pytest.mark.parametrize("copy", [False, True])
def test_random_tree_is_tree(copy):
    g = random_tree_network(40, 3, copy_variables=copy)
    assert g.is_tree() and len(g.edges) == 39
    assert all(n.tensor.to_dense().min() > 0 for n in g.nodes.values() if n.kind == "factor")


def test_random_regular_degree():
    g = random_regular_network(20, 3, 1)
    assert all(len(a) == 3 for a in g.adjacency.values())
    assert not g.is_tree()


def test_loopy_network_edge_count():
    g = random_loopy_network(12, 4, 0)
    assert len(g.edges) == 11 + 4 and not g.is_tree()


def test_lattice_shape():
    g = lattice_network(4, 0)
    assert len(g.nodes) == 64 and len(g.edges) == 3 * 4 * 4 * 3
    degrees = sorted({len(a) for a in g.adjacency.values()})
    assert degrees == [3, 4, 5, 6]
