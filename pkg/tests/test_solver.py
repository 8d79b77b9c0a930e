import numpy as np
import pytest

from cavity_tn import _kernels
from cavity_tn.bp import BpConfig
from cavity_tn.cnf import CnfInstance, energy, random_ksat
from cavity_tn.oracle import enumerate_assignments
from cavity_tn.solver import (DecimationConfig, SolveResult, decimate, residual,
                              solve_pipeline, walksat)


def test_config_validation():
    for kw in (dict(engine="nope"), dict(bias_threshold=0.0), dict(walksat_flips=-1),
               dict(walksat_mixing=1.5)):
        with pytest.raises(ValueError):
            DecimationConfig(**kw)
    assert DecimationConfig(engine="sp").propagate_units
    assert not DecimationConfig(engine="bp").propagate_units


# residual formulas


def test_residual_drops_satisfied_clauses_and_fixed_literals():
    inst = CnfInstance(3, ((1, 2), (-2, 3)))
    value = np.array([-1, 1, -1], dtype=np.int8)
    res = residual(inst.incidence, value)
    assert not res.contradiction
    assert list(res.free_vars) == [0, 2]
    assert res.incidence.num_clauses == 1
    # remaining clause is (x3) -> residual variable 1, positive
    assert list(res.incidence.edge_var) == [1] and not res.incidence.edge_neg[0]


def test_residual_contradiction():
    inst = CnfInstance(2, ((1, 2),))
    assert residual(inst.incidence, np.array([0, 0], dtype=np.int8)).contradiction


# decimation


def test_unit_clause_bp():
    res = decimate(CnfInstance(1, ((1,),)), DecimationConfig(engine="bp"))
    assert res.status == "SAT" and res.decimation_steps == 1
    assert res.assignment.tolist() == [True]


def test_bp_decimation_low_density():
    inst = random_ksat(20, 40, 3, 0)
    res = decimate(inst, DecimationConfig(engine="bp"))
    assert res.status == "SAT"
    assert energy(inst, res.assignment) == 0
    assert enumerate_assignments(inst).satisfiable


def test_trace_variables_distinct_and_consistent():
    inst = random_ksat(40, 120, 3, 2)
    res = decimate(inst, DecimationConfig(engine="bp"))
    assert res.status == "SAT"
    vars_ = [t[0] for t in res.trace]
    assert len(set(vars_)) == len(vars_)
    for var, val, bias, _ in res.trace:
        assert res.assignment[var - 1] == val
        assert val == (bias < 0)


def test_decimation_is_deterministic():
    inst = random_ksat(50, 180, 3, 5)
    for engine in ("bp", "sp"):
        cfg = DecimationConfig(engine=engine, seed=3, bp_config=BpConfig(init="random", seed=3))
        a, b = decimate(inst, cfg), decimate(inst, cfg)
        assert a.to_dict() == b.to_dict()


def test_contradiction_from_unit_conflict():
    inst = CnfInstance(2, ((1,), (-1,)))
    assert decimate(inst, DecimationConfig(engine="sp")).status == "CONTRADICTION"
    assert decimate(inst, DecimationConfig(engine="bp")).status == "CONTRADICTION"


def test_contradiction_from_zero_messages():
    inst = CnfInstance(2, ((1,), (-1,), (1, 2)))
    res = decimate(inst, DecimationConfig(engine="bp"))
    assert res.status == "CONTRADICTION"


def test_unit_propagation_finishes_without_walksat():
    inst = CnfInstance(3, ((1,), (-1, 2), (-2, 3)))
    res = solve_pipeline(inst)
    assert res.status == "SAT" and not res.handed_to_walksat
    assert res.assignment.tolist() == [True, True, True]
    assert res.decimation_steps == 0


def test_low_density_hands_off_at_step_zero():
    # SP surveys vanish far below the threshold
    inst = random_ksat(200, 300, 3, 1)
    res = solve_pipeline(inst, DecimationConfig(seed=1))
    assert res.status == "SAT" and res.handed_to_walksat
    assert res.decimation_steps == 0
    assert energy(inst, res.assignment) == 0


def test_sp_without_walksat_budget_stays_unknown():
    inst = random_ksat(200, 300, 3, 1)
    res = decimate(inst, DecimationConfig(engine="sp", walksat_flips=0, seed=1))
    assert res.status == "UNKNOWN" and res.handed_to_walksat


def test_walksat_on_failure_flag():
    # a one-sweep budget never converges, so only the flag decides the outcome
    inst = random_ksat(100, 380, 3, 0)
    cfg = DecimationConfig(engine="sp", bp_config=BpConfig(max_iterations=1), seed=0)
    plain = decimate(inst, cfg)
    assert plain.status == "UNKNOWN" and not plain.handed_to_walksat
    assert plain.decimation_steps == 0
    rescued = solve_pipeline(inst, cfg)
    assert rescued.handed_to_walksat
    if rescued.status == "SAT":
        assert energy(inst, rescued.assignment) == 0


def test_pipeline_near_threshold():
    inst = random_ksat(1000, 4100, 3, 0)
    res = solve_pipeline(inst, DecimationConfig(seed=0, bp_config=BpConfig(init="random", seed=0)))
    assert res.status == "SAT"
    assert energy(inst, res.assignment) == 0


def test_to_dict_shape():
    d = SolveResult("SAT", np.array([True, False])).to_dict()
    assert d["assignment"] == {"x1": True, "x2": False}
    assert set(d) == {"status", "assignment", "decimation_steps", "walksat_flips",
                      "handed_to_walksat", "trace"}


# WalkSat


def test_walksat_unit_clause():
    res = walksat(CnfInstance(1, ((1,),)), f=10, p=0.0, seed=0)
    assert res.status == "SAT" and res.flips <= 1


def test_walksat_empty_formula():
    res = walksat(CnfInstance(5, ()), seed=2)
    assert res.status == "SAT" and res.flips == 0


def test_walksat_easy_instance():
    inst = random_ksat(1000, 3500, 3, 0)
    res = walksat(inst, seed=0)
    assert res.status == "SAT" and energy(inst, res.assignment) == 0


def test_walksat_unsat_gives_unknown():
    res = walksat(CnfInstance(1, ((1,), (-1,))), f=50, seed=0)
    assert res.status == "UNKNOWN" and res.flips == 50


def test_walksat_deterministic_per_seed():
    inst = random_ksat(300, 1200, 3, 9)
    a, b = walksat(inst, seed=4), walksat(inst, seed=4)
    assert a.flips == b.flips
    np.testing.assert_array_equal(a.assignment, b.assignment)


@pytest.mark.parametrize("restricted", [False, True])
def test_walksat_restricted_variant(restricted):
    inst = random_ksat(200, 700, 3, 3)
    assert walksat(inst, seed=1, restricted=restricted).status == "SAT"


def test_break_minus_make_is_energy_change():
    rng = np.random.default_rng(0)
    inst = random_ksat(40, 170, 3, 6)
    inc = inst.incidence
    x = rng.random(inst.num_vars) < 0.5
    numtrue, make, brk, unsat, where, n_unsat = _kernels.ws_init(
        x, inc.clause_ptr, inc.clause_edges, inc.edge_var, inc.edge_neg)
    for _ in range(200):
        e0 = energy(inst, x)
        assert n_unsat == e0
        for i in range(inst.num_vars):
            y = x.copy()
            y[i] = not y[i]
            assert brk[i] - make[i] == energy(inst, y) - e0
        v = int(rng.integers(inst.num_vars))
        n_unsat = _kernels.ws_flip(v, x, numtrue, make, brk, unsat, where, n_unsat,
                                   inc.var_ptr, inc.edge_clause, inc.clause_ptr,
                                   inc.clause_edges, inc.edge_var, inc.edge_neg)
        assert sorted(unsat[:n_unsat]) == [a for a in range(inst.num_clauses)
                                          if not any(x[abs(l) - 1] == (l > 0)
                                                     for l in inst.clauses[a])]
