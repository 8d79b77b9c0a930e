import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavity_tn.bp import BpConfig, ZeroMessageError, run_bp
from cavity_tn.cnf import CnfInstance, random_ksat
from cavity_tn.graph import (HAT, NOT_HAT, QS, QSTAR, QU, SP_BOND, build_sp_tfg, build_tfg,
                             clause_node, var_node)
from cavity_tn.sp import (BiasVector, SpState, bp_biases, init_sp_state, run_sp, sp_biases,
                          sp_update_direct, sp_update_tensor)


def _edge(inst, i, a):
    return inst.incidence.edge_index[(i, a)]


def _state(inst, q_hat=None, tri=None):
    e = inst.incidence.num_edges
    q = np.zeros(e) if q_hat is None else np.asarray(q_hat, float)
    t = np.tile([0.0, 0.0, 1.0], (e, 1)) if tri is None else np.asarray(tri, float)
    return SpState(q, t)


def _project(inst, vec, edge):
    s, _ = edge
    return vec[HAT] if s[0] == "c" else vec[[QU, QS, QSTAR]]


# direct updates


def test_trivial_inputs_give_qstar():
    inst = CnfInstance(3, ((1, 2), (1, 3), (-1, 2, 3)))
    out = sp_update_direct(inst, _state(inst), (var_node(0), clause_node(0)))
    np.testing.assert_array_equal(out, [0.0, 0.0, 1.0])


def test_half_surveys_give_uniform_triple():
    # variable 1: a(+), b(+), c(-); edge (1, a) has S = {b}, U = {c}
    inst = CnfInstance(4, ((1, 2), (1, 3), (-1, 4)))
    q = np.zeros(inst.incidence.num_edges)
    q[_edge(inst, 0, 1)] = 0.5
    q[_edge(inst, 0, 2)] = 0.5
    out = sp_update_direct(inst, _state(inst, q), (var_node(0), clause_node(0)))
    np.testing.assert_allclose(out, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_clause_survey_is_product_of_qu():
    inst = CnfInstance(3, ((1, 2, 3),))
    tri = np.tile([0.0, 0.0, 1.0], (3, 1))
    tri[_edge(inst, 1, 0)] = [0.25, 0.5, 0.25]
    tri[_edge(inst, 2, 0)] = [0.2, 0.3, 0.5]
    out = sp_update_direct(inst, _state(inst, tri=tri), (clause_node(0), var_node(0)))
    assert out == pytest.approx(0.05, abs=1e-15)


def test_contradictory_surveys_raise():
    inst = CnfInstance(2, ((1, 2), (1, -2), (-1, 2)))
    q = np.zeros(inst.incidence.num_edges)
    q[_edge(inst, 0, 1)] = 1.0
    q[_edge(inst, 0, 2)] = 1.0
    with pytest.raises(ZeroMessageError):
        sp_update_direct(inst, _state(inst, q), (var_node(0), clause_node(0)))


def _ps_pu(tri):
    # from unnormalized (Ps(1-Pu), Pu(1-Ps), PsPu): Ps = Q*/(Q*+QS), Pu = Q*/(Q*+QU)
    u, s, star = tri
    return star / (star + s), star / (star + u)


def test_monotone_forcing():
    rng = np.random.default_rng(0)
    inst = random_ksat(6, 30, 3, 1)
    inc = inst.incidence
    for _ in range(200):
        e = int(rng.integers(inc.num_edges))
        edge = (var_node(int(inc.edge_var[e])), clause_node(int(inc.edge_clause[e])))
        q = rng.random(inc.num_edges) * 0.9
        up = np.minimum(q + rng.random(inc.num_edges) * 0.05, 0.95)
        lo_s, lo_u = _ps_pu(sp_update_direct(inst, _state(inst, q), edge))
        hi_s, hi_u = _ps_pu(sp_update_direct(inst, _state(inst, up), edge))
        assert hi_s <= lo_s + 1e-12 and hi_u <= lo_u + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 20), st.integers(1, 60), st.integers(0, 2**31))
def test_updated_triples_stay_on_simplex(n, m, seed):
    inst = random_ksat(n, m, 3, seed)
    state = init_sp_state(inst, BpConfig(init="random", seed=seed))
    rep = run_sp(inst, BpConfig(max_iterations=3), state=state)
    if rep.contradiction:
        return
    t = rep.state.q_triple
    assert np.all(t >= 0) and np.allclose(t.sum(axis=1), 1, atol=1e-12)
    assert np.all((rep.state.q_hat >= 0) & (rep.state.q_hat <= 1))


# tensor form


def test_tensor_update_matches_direct_on_random_edges():
    rng = np.random.default_rng(1)
    for seed in range(4):
        inst = random_ksat(30, 100, 3, seed)
        sp = build_sp_tfg(inst)
        state = init_sp_state(inst, BpConfig(init="random", seed=seed))
        envs = state.to_environments(inst)
        dirs = list(sp.directional)
        for k in rng.choice(len(dirs), 40, replace=False):
            edge = dirs[k]
            a = _project(inst, sp_update_tensor(sp, envs, edge), edge)
            b = sp_update_direct(inst, state, edge)
            np.testing.assert_allclose(a, b, atol=1e-12)


def test_tensor_trivial_fixed_point_invariant():
    inst = random_ksat(20, 60, 3, 3)
    sp = build_sp_tfg(inst)
    state = _state(inst)
    envs = state.to_environments(inst)
    for edge in sp.directional:
        out = sp_update_tensor(sp, envs, edge)
        np.testing.assert_array_equal(out, envs[edge])
        np.testing.assert_array_equal(_project(inst, out, edge),
                                      sp_update_direct(inst, state, edge))


def test_lone_variable_outputs_qstar_vector():
    inst = CnfInstance(3, ((1, 2, 3),))
    sp = build_sp_tfg(inst)
    envs = init_sp_state(inst).to_environments(inst)
    out = sp_update_tensor(sp, envs, (var_node(0), clause_node(0)))
    np.testing.assert_array_equal(out, np.eye(SP_BOND)[QSTAR])


def test_state_embedding_round_trip():
    inst = random_ksat(12, 40, 3, 2)
    state = init_sp_state(inst, BpConfig(init="random", seed=9))
    envs = state.to_environments(inst)
    for (s, _), v in envs.items():
        if s[0] == "c":
            assert v[QU] == v[QS] == v[QSTAR] == 0 and v[HAT] + v[NOT_HAT] == pytest.approx(1)
        else:
            assert v[HAT] == v[NOT_HAT] == 0
    back = SpState.from_environments(inst, envs)
    np.testing.assert_array_equal(back.q_hat, state.q_hat)
    np.testing.assert_array_equal(back.q_triple, state.q_triple)


# runs


def test_inits():
    inst = random_ksat(10, 30, 3, 0)
    u = init_sp_state(inst)
    assert np.all(u.q_hat == 0.5) and np.allclose(u.q_triple, 1 / 3)
    r = init_sp_state(inst, BpConfig(init="random", seed=1))
    assert np.allclose(r.q_triple.sum(axis=1), 1)
    np.testing.assert_array_equal(r.q_hat, init_sp_state(inst, BpConfig(init="random",
                                                                         seed=1)).q_hat)


def test_degree_one_instance_reaches_trivial_point_in_two_sweeps():
    inst = CnfInstance(6, ((1, 2, 3), (-4, 5, -6)))
    for init in ("uniform", "random"):
        rep = run_sp(inst, BpConfig(max_iterations=2, init=init, seed=4))
        np.testing.assert_array_equal(rep.state.q_hat, 0.0)
        np.testing.assert_array_equal(rep.state.q_triple, np.tile([0, 0, 1.0], (6, 1)))
        # the next sweep moves nothing, which is what the convergence check sees
        assert run_sp(inst, BpConfig(), state=rep.state).iterations == 1


@pytest.mark.parametrize("schedule", ["in_place", "two_phase"])
def test_direct_and_tensor_trajectories_agree(schedule):
    inst = random_ksat(25, 90, 3, 6)
    cfg = BpConfig(init="random", seed=2, schedule=schedule)
    state = init_sp_state(inst, cfg)
    for sweeps in (1, 2, 5):
        c = BpConfig(init="random", seed=2, schedule=schedule, max_iterations=sweeps)
        a = run_sp(inst, c, "direct", state).state
        b = run_sp(inst, c, "tensor", state).state
        np.testing.assert_allclose(a.q_hat, b.q_hat, atol=1e-10)
        np.testing.assert_allclose(a.q_triple, b.q_triple, atol=1e-10)
    cfg = BpConfig(init="random", seed=2, schedule=schedule, max_iterations=60)
    a, b = run_sp(inst, cfg, "direct"), run_sp(inst, cfg, "tensor")
    assert (a.status, a.iterations) == (b.status, b.iterations)
    np.testing.assert_allclose(a.state.q_hat, b.state.q_hat, atol=1e-10)


def test_tensor_mode_is_plain_bp():
    inst = random_ksat(15, 50, 3, 1)
    state = init_sp_state(inst, BpConfig(init="random", seed=0))
    cfg = BpConfig(max_iterations=4)
    rep = run_bp(build_sp_tfg(inst), cfg, state.to_environments(inst))
    direct = run_sp(inst, cfg, "direct", state).state
    np.testing.assert_allclose(SpState.from_environments(inst, rep.environments).q_hat,
                               direct.q_hat, atol=1e-12)


def test_unknown_mode():
    with pytest.raises(ValueError):
        run_sp(CnfInstance(3, ((1, 2, 3),)), mode="fast")


def test_sp_converges_near_threshold():
    ok = 0
    for seed in range(3):
        inst = random_ksat(1000, 4200, 3, seed)
        ok += run_sp(inst, BpConfig(init="random", seed=seed)).converged
    assert ok >= 2


# biases


def test_forced_variable_bias():
    inst = CnfInstance(3, ((1, 2, 3),))
    q = np.zeros(3)
    q[_edge(inst, 0, 0)] = 1.0
    b = sp_biases(inst, _state(inst, q))
    assert isinstance(b, BiasVector)
    assert (b.p0[0], b.p1[0], b.bias[0]) == (0.0, 1.0, -1.0)


def test_trivial_point_biases_vanish():
    inst = random_ksat(20, 60, 3, 0)
    b = sp_biases(inst, _state(inst))
    np.testing.assert_array_equal(b.p0, 0)
    np.testing.assert_array_equal(b.bias, 0)


def test_symmetric_variable_bias_zero():
    inst = CnfInstance(3, ((1, 2), (-1, 3)))
    b = sp_biases(inst, _state(inst, np.full(4, 0.4)))
    assert b.bias[0] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 30), st.integers(1, 90), st.integers(0, 2**31), st.booleans())
def test_bias_range(n, m, seed, normalized):
    inst = random_ksat(n, m, 3, seed)
    state = init_sp_state(inst, BpConfig(init="random", seed=seed))
    b = sp_biases(inst, state, normalized)
    assert np.all(np.abs(b.bias) <= 1 + 1e-12)
    assert np.all(b.p0 >= 0) and np.all(b.p1 >= 0)
    if normalized:
        assert np.all(b.p0 + b.p1 <= 1 + 1e-12)


def test_bp_bias_examples():
    g = build_tfg(CnfInstance(2, ((1,),)))
    b = bp_biases(g, run_bp(g).environments)
    np.testing.assert_allclose(b.bias, [-1.0, 0.0])
    g = build_tfg(CnfInstance(3, ((1, 2), (-2, 3))))
    b = bp_biases(g, run_bp(g).environments)
    assert b.bias[0] == pytest.approx(-0.5, abs=1e-12)
