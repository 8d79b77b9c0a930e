"""Batch experiments: solver success-rate sweeps, BP validation against
exact enumeration, and sweep timing benchmarks."""

from __future__ import annotations

import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bp import (BpConfig, ContradictionError, bethe_free_entropy, prepare_vectorized,
                 run_sat_bp, sat_environments, sat_marginals, stack_environments,
                 init_environments, vectorized_sweep)
from .cnf import random_ksat
from .graph import build_tfg, lattice_network
from .oracle import enumerate_assignments, marginal_distance
from .solver import DecimationConfig, decimate, solve_pipeline, walksat
from .sp import init_sp_state, run_sp

__all__ = [
    "ENGINES",
    "ExperimentSpec",
    "derive_seed",
    "instance_for",
    "run_sweep",
    "aggregate_sweep",
    "run_validation",
    "aggregate_validation",
    "bench_lattice",
    "bench_ksat",
    "write_csv",
    "encode_assignment",
    "decode_assignment",
    "default_workers",
]

# "sp" is SP decimation with no WalkSat budget for the residual; "sp-walksat"
# hands the residual to WalkSat once the biases become trivial.
ENGINES = ("bp", "sp", "walksat", "sp-walksat")
WALKSAT_ENGINES = ("walksat", "sp-walksat")


def default_workers() -> int:
    return max(1, int(os.environ.get("CAVITY_TN_WORKERS", "1")))


def _tag(x) -> int:
    if isinstance(x, str):
        return zlib.crc32(x.encode())
    return int(x)


def derive_seed(base: int, *parts) -> int:
    """Deterministic 63-bit seed from a base seed and a key path."""
    ss = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, *map(_tag, parts)])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) & 0x7FFFFFFF) << 32


def instance_for(n: int, alpha: float, k: int, base_seed: int, alpha_idx: int, inst_idx: int):
    """The random instance at grid point ``(alpha_idx, inst_idx)``; shared
    by every engine so that engines are compared on identical formulas."""
    seed = derive_seed(base_seed, "instance", alpha_idx, inst_idx)
    return random_ksat(n, int(round(alpha * n)), k, seed), seed


@dataclass(frozen=True)
class ExperimentSpec:
    """Grid of random k-SAT instances and the solvers to run on them."""

    n: int
    alphas: tuple
    instances_per_point: int = 20
    engines: tuple = ("bp", "walksat", "sp-walksat")
    seed: int = 0
    k: int = 3
    tolerance: float = 1e-3
    max_iterations: int = 1000
    flips: int = 10**6
    mixing: tuple = (0.5,)
    bias_threshold: float = 1e-3
    init: str = "random"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "engines", tuple(self.engines))
        object.__setattr__(self, "mixing", tuple(float(p) for p in self.mixing))
        if not self.alphas or any(a <= 0 for a in self.alphas):
            raise ValueError("alphas must be positive")
        if self.instances_per_point < 1:
            raise ValueError("instances_per_point must be at least 1")
        bad = set(self.engines) - set(ENGINES)
        if bad:
            raise ValueError(f"unknown engines {sorted(bad)}")
        if not self.mixing or any(not 0.0 <= p <= 1.0 for p in self.mixing):
            raise ValueError("mixing values must lie in [0, 1]")
        if self.n < self.k or self.k < 1:
            raise ValueError("need 1 <= k <= n")

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("workers")
        return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------------- #
# success-rate sweeps


def _solve_task(task):
    spec, engine, ai, ii, p = task
    alpha = spec.alphas[ai]
    inst, inst_seed = instance_for(spec.n, alpha, spec.k, spec.seed, ai, ii)
    solver_seed = derive_seed(spec.seed, engine, ai, ii)
    bp_cfg = BpConfig(tolerance=spec.tolerance, max_iterations=spec.max_iterations,
                      init=spec.init, seed=solver_seed)
    cfg = DecimationConfig(engine="bp" if engine == "bp" else "sp",
                           bias_threshold=spec.bias_threshold, bp_config=bp_cfg,
                           walksat_flips=0 if engine == "sp" else spec.flips,
                           walksat_mixing=p, seed=solver_seed)
    t0 = time.perf_counter()
    if engine == "walksat":
        res = walksat(inst, spec.flips, p, solver_seed)
    elif engine == "sp-walksat":
        res = solve_pipeline(inst, cfg)
    else:
        res = decimate(inst, cfg)
    wall = (time.perf_counter() - t0) * 1e3
    return {
        "engine": engine,
        "alpha": alpha,
        "n": spec.n,
        "alpha_index": ai,
        "instance_index": ii,
        "instance_seed": inst_seed,
        "solver_seed": solver_seed,
        "mixing": p if engine in WALKSAT_ENGINES else "",
        "status": res.status,
        "decimation_steps": res.decimation_steps,
        "flips": res.flips,
        "wall_ms": round(wall, 3),
        "certificate": encode_assignment(res.assignment),
    }


def encode_assignment(x) -> str:
    """Hex of the bit-packed assignment (empty when there is none)."""
    return "" if x is None else np.packbits(np.asarray(x, dtype=bool)).tobytes().hex()


def decode_assignment(text: str, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes.fromhex(text), dtype=np.uint8))[:n].astype(bool)


def _tasks(spec: ExperimentSpec):
    for engine in spec.engines:
        ps = spec.mixing if engine in WALKSAT_ENGINES else (spec.mixing[0],)
        for ai in range(len(spec.alphas)):
            for p in ps:
                for ii in range(spec.instances_per_point):
                    yield (spec, engine, ai, ii, p)


def run_sweep(spec: ExperimentSpec, progress=None) -> list[dict]:
    """One row per (engine, alpha, mixing, instance), in a fixed order that
    does not depend on the number of workers."""
    tasks = list(_tasks(spec))
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as ex:
            rows = list(ex.map(_solve_task, tasks, chunksize=1))
    else:
        rows = []
        for t in tasks:
            rows.append(_solve_task(t))
            if progress:
                progress(rows[-1])
    return rows


def aggregate_sweep(rows: list[dict]) -> list[dict]:
    """Success fraction per (engine, alpha); with several mixing values the
    best one is reported and flagged."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["engine"], r["alpha"]), {}).setdefault(r["mixing"], []).append(r)
    out = []
    for (engine, alpha), by_p in groups.items():
        best_p, best = None, None
        for p, rs in by_p.items():
            if best is None or sum(r["status"] == "SAT" for r in rs) > \
                    sum(r["status"] == "SAT" for r in best):
                best_p, best = p, rs
        succ = sum(r["status"] == "SAT" for r in best)
        out.append({
            "engine": engine,
            "alpha": alpha,
            "n": best[0]["n"],
            "successes": succ,
            "total": len(best),
            "fraction": succ / len(best),
            "mean_wall_ms": round(float(np.mean([r["wall_ms"] for r in best])), 3),
            "mixing": best_p,
            "best_of": len(by_p) if len(by_p) > 1 else "",
        })
    return out


# ---------------------------------------------------------------------- #
# BP validation against exact enumeration


@dataclass
class ValidationRow:
    alpha: float
    n: int
    seed: int
    sat: bool
    s_exact: float
    s_bethe: float
    marginal_distance: float
    bp_converged: bool
    bp_unsat: bool = False

    @property
    def abs_diff(self) -> float:
        return abs(self.s_exact - self.s_bethe)


def _validate_task(task):
    n, alpha, k, base, ai, ii, bp_cfg = task
    inst, seed = instance_for(n, alpha, k, base, ai, ii)
    exact = enumerate_assignments(inst)
    rep = run_sat_bp(inst, bp_cfg)
    s_bethe = math.nan
    est = None
    if not rep.contradiction:
        try:
            est = sat_marginals(inst, rep.nuhat)
            f = bethe_free_entropy(build_tfg(inst), sat_environments(inst, rep.nu, rep.nuhat))
            s_bethe = f / n
        except ContradictionError:
            est = None
    return ValidationRow(
        alpha=alpha, n=n, seed=seed, sat=exact.satisfiable,
        s_exact=exact.per_variable_entropy if exact.satisfiable else math.nan,
        s_bethe=s_bethe, marginal_distance=marginal_distance(exact, est),
        bp_converged=rep.converged, bp_unsat=est is None,
    )


def run_validation(n: int, alphas, instances: int, seed: int = 0, k: int = 3,
                   bp_config: BpConfig = BpConfig(), workers: int = 1) -> list[ValidationRow]:
    """Exact versus BP statistics on every instance of the grid."""
    tasks = [(n, float(a), k, seed, ai, ii, bp_config)
             for ai, a in enumerate(alphas) for ii in range(instances)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_validate_task, tasks))
    return [_validate_task(t) for t in tasks]


def _nanmean(xs):
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else math.nan


def aggregate_validation(rows: list[ValidationRow]) -> list[dict]:
    """Per-alpha means. Entropies average over SAT instances; the Bethe
    columns additionally require a BP estimate."""
    out = []
    for alpha in dict.fromkeys(r.alpha for r in rows):
        rs = [r for r in rows if r.alpha == alpha]
        sat = [r for r in rs if r.sat]
        out.append({
            "alpha": alpha,
            "n": rs[0].n,
            "instances": len(rs),
            "sat_fraction": len(sat) / len(rs),
            "s_exact": _nanmean([r.s_exact for r in sat]),
            "s_bethe": _nanmean([r.s_bethe for r in sat]),
            "abs_diff": _nanmean([r.abs_diff for r in sat]),
            "marginal_distance": float(np.mean([r.marginal_distance for r in rs])),
            "bp_converged": float(np.mean([r.bp_converged for r in rs])),
        })
    return out


# ---------------------------------------------------------------------- #
# benchmarks


def bench_lattice(L: int, sweeps: int = 3, seed: int = 0) -> dict:
    """Time vectorized BP sweeps on an ``L x L x L`` lattice network."""
    graph = lattice_network(L, seed)
    plan = prepare_vectorized(graph)
    arr = stack_environments(plan, init_environments(graph))
    times = []
    for _ in range(sweeps):
        t0 = time.perf_counter()
        arr = vectorized_sweep(plan, arr)
        times.append(time.perf_counter() - t0)
    return {"shape": f"lattice:{L}", "sweeps": sweeps,
            "ms_per_sweep": 1e3 * float(np.mean(times)),
            "ms_best": 1e3 * float(np.min(times))}


def bench_ksat(n: int, alpha: float, sweeps: int = 3, seed: int = 0, k: int = 3) -> dict:
    """Time single SP (direct) and BP sweeps on a random k-SAT instance."""
    inst = random_ksat(n, int(round(alpha * n)), k, seed)
    cfg = BpConfig(tolerance=1e-300, max_iterations=1, init="random", seed=seed)
    state = init_sp_state(inst, cfg)
    sp_t, bp_t = [], []
    warm = None
    for _ in range(sweeps):
        t0 = time.perf_counter()
        rep = run_sp(inst, cfg, "direct", state)
        sp_t.append(time.perf_counter() - t0)
        state = rep.state
        t0 = time.perf_counter()
        brep = run_sat_bp(inst, cfg, warm)
        bp_t.append(time.perf_counter() - t0)
        warm = (brep.nu, brep.nuhat)
    return {"shape": f"ksat:n={n},alpha={alpha}", "sweeps": sweeps,
            "ms_per_sweep": 1e3 * float(np.mean(sp_t)),
            "bp_ms_per_sweep": 1e3 * float(np.mean(bp_t)),
            "edges": int(inst.incidence.num_edges)}


def write_csv(fh, rows: list[dict], columns, config_json: str | None = None):
    """Comma-separated with a header row; an optional leading
    ``# config=...`` line records everything needed to reproduce it."""
    import csv

    if config_json is not None:
        fh.write(f"# config={config_json}\n")
    w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r.get(c, "")) for c in columns})


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v
