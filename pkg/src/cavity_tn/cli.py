"""Command-line entry point: ``gen``, ``solve``, ``validate``, ``sweep``, ``bench``."""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from dataclasses import asdict

from .bp import BpConfig
from .cnf import DimacsError, parse_dimacs, random_ksat, write_dimacs
from .experiments import (ENGINES, ExperimentSpec, aggregate_sweep, aggregate_validation,
                          bench_ksat, bench_lattice, default_workers, run_sweep,
                          run_validation, write_csv)
from .oracle import OracleLimitError
from .solver import DecimationConfig, decimate, solve_pipeline, walksat

EXIT_SAT, EXIT_IO, EXIT_UNKNOWN, EXIT_CONTRADICTION = 0, 1, 2, 3

SWEEP_COLUMNS = ("engine", "alpha", "n", "successes", "total", "fraction",
                 "mean_wall_ms", "mixing", "best_of")
RUN_COLUMNS = ("engine", "alpha", "n", "alpha_index", "instance_index", "instance_seed",
               "solver_seed", "mixing", "status", "decimation_steps", "flips", "wall_ms",
               "certificate")
VALIDATE_COLUMNS = ("kind", "alpha", "n", "seed", "sat", "S_exact/N", "S_bethe/N",
                    "abs_diff", "marginal_distance", "bp_converged")


def parse_alphas(text: str) -> list[float]:
    """``"0.5:5.0:0.5"`` (inclusive range) or ``"3.8,4.0,4.2"``."""
    if ":" in text:
        lo, hi, step = map(float, text.split(":"))
        k = int(round((hi - lo) / step))
        return [round(lo + i * step, 10) for i in range(k + 1)]
    return [float(a) for a in text.split(",") if a]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _add_message_flags(p):
    p.add_argument("--tol", type=float, default=1e-3, help="L1 convergence tolerance")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--damping", type=float, default=0.0)
    p.add_argument("--init", choices=("uniform", "random"), default="random")
    p.add_argument("--seed", type=int, default=0)


def _add_solver_flags(p):
    p.add_argument("--bias-threshold", type=float, default=1e-3)
    p.add_argument("--flips", type=int, default=10**6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cavity-tn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a random k-SAT instance in DIMACS form")
    g.add_argument("--n", type=int, required=True)
    size = g.add_mutually_exclusive_group(required=True)
    size.add_argument("--m", type=int)
    size.add_argument("--alpha", type=float)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-")

    s = sub.add_parser("solve", help="solve a DIMACS instance (path or - for stdin)")
    s.add_argument("path", nargs="?", default="-")
    s.add_argument("--engine", choices=ENGINES, default="sp-walksat")
    _add_message_flags(s)
    _add_solver_flags(s)
    s.add_argument("--mixing", type=float, default=0.5, help="WalkSat random-walk probability")
    s.add_argument("--unit-propagation", choices=("auto", "on", "off"), default="auto")
    s.add_argument("--out", default="-")

    v = sub.add_parser("validate", help="BP estimates against exact enumeration")
    v.add_argument("--n", type=int, default=20)
    v.add_argument("--alphas", type=parse_alphas, default=parse_alphas("0.5:5.0:0.5"))
    v.add_argument("--instances", type=int, default=20)
    _add_message_flags(v)
    v.set_defaults(init="uniform")
    v.add_argument("--k", type=int, default=3)
    v.add_argument("--workers", type=int, default=None)
    v.add_argument("--format", choices=("csv", "json"), default="csv")
    v.add_argument("--out", default="-")

    w = sub.add_parser("sweep", help="solver success fractions over a grid of alphas")
    w.add_argument("--n", type=int, default=1000)
    w.add_argument("--alphas", type=parse_alphas, default=parse_alphas("3.8,4.0,4.1,4.2"))
    w.add_argument("--instances", type=int, default=20)
    w.add_argument("--engines", type=lambda t: tuple(t.split(",")),
                   default=("bp", "walksat", "sp-walksat"))
    _add_message_flags(w)
    _add_solver_flags(w)
    w.add_argument("--mixing", type=_floats, default=[0.5],
                   help="comma-separated WalkSat probabilities; best-of is reported")
    w.add_argument("--k", type=int, default=3)
    w.add_argument("--runs", action="store_true", help="also emit one row per run")
    w.add_argument("--workers", type=int, default=None)
    w.add_argument("--format", choices=("csv", "json"), default="csv")
    w.add_argument("--out", default="-")

    b = sub.add_parser("bench", help="time message-passing sweeps")
    b.add_argument("shape", choices=("lattice", "ksat"))
    b.add_argument("--L", type=int, default=50)
    b.add_argument("--n", type=int, default=100_000)
    b.add_argument("--alpha", type=float, default=4.1)
    b.add_argument("--sweeps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="-")
    return parser


@contextmanager
def _output(path):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _bp_config(args) -> BpConfig:
    return BpConfig(tolerance=args.tol, max_iterations=args.max_iters,
                    damping=args.damping, init=args.init, seed=args.seed)


def cmd_gen(args) -> int:
    m = args.m if args.m is not None else int(round(args.alpha * args.n))
    inst = random_ksat(args.n, m, args.k, args.seed)
    with _output(args.out) as fh:
        fh.write(f"c random {args.k}-SAT n={args.n} m={m} seed={args.seed}\n")
        fh.write(write_dimacs(inst))
    return 0


def cmd_solve(args) -> int:
    try:
        if args.path == "-":
            inst = parse_dimacs(sys.stdin)
        else:
            with open(args.path, encoding="utf-8") as fh:
                inst = parse_dimacs(fh)
    except (OSError, DimacsError, UnicodeDecodeError) as exc:
        print(f"cavity-tn: {exc}", file=sys.stderr)
        return EXIT_IO
    up = {"auto": None, "on": True, "off": False}[args.unit_propagation]
    cfg = DecimationConfig(engine="bp" if args.engine == "bp" else "sp",
                           bias_threshold=args.bias_threshold, bp_config=_bp_config(args),
                           walksat_flips=0 if args.engine == "sp" else args.flips,
                           walksat_mixing=args.mixing,
                           seed=args.seed, unit_propagation=up)
    if args.engine == "walksat":
        res = walksat(inst, args.flips, args.mixing, args.seed)
    elif args.engine == "sp-walksat":
        res = solve_pipeline(inst, cfg)
    else:
        res = decimate(inst, cfg)
    out = res.to_dict()
    out["config"] = {**_jsonable(asdict(cfg)), "engine": args.engine}
    try:
        with _output(args.out) as fh:
            json.dump(out, fh)
            fh.write("\n")
    except OSError as exc:
        print(f"cavity-tn: {exc}", file=sys.stderr)
        return EXIT_IO
    return {"SAT": EXIT_SAT, "CONTRADICTION": EXIT_CONTRADICTION}.get(res.status, EXIT_UNKNOWN)


def _jsonable(d):
    return json.loads(json.dumps(d, default=str))


def _workers(args) -> int:
    return args.workers if args.workers is not None else default_workers()


def cmd_validate(args) -> int:
    cfg = _bp_config(args)
    try:
        rows = run_validation(args.n, args.alphas, args.instances, args.seed, args.k, cfg,
                              _workers(args))
    except OracleLimitError as exc:
        print(f"cavity-tn: {exc}", file=sys.stderr)
        return EXIT_IO
    config = {"command": "validate", "n": args.n, "alphas": args.alphas, "k": args.k,
              "instances": args.instances, "seed": args.seed, "bp": asdict(cfg)}
    per = [{"kind": "instance", "alpha": r.alpha, "n": r.n, "seed": r.seed, "sat": r.sat,
            "S_exact/N": r.s_exact, "S_bethe/N": r.s_bethe, "abs_diff": r.abs_diff,
            "marginal_distance": r.marginal_distance, "bp_converged": r.bp_converged}
           for r in rows]
    agg = [{"kind": "mean", "alpha": a["alpha"], "n": a["n"], "seed": "",
            "sat": a["sat_fraction"], "S_exact/N": a["s_exact"], "S_bethe/N": a["s_bethe"],
            "abs_diff": a["abs_diff"], "marginal_distance": a["marginal_distance"],
            "bp_converged": a["bp_converged"]} for a in aggregate_validation(rows)]
    with _output(args.out) as fh:
        if args.format == "json":
            json.dump({"config": config, "rows": _nan_to_none(per),
                       "aggregates": _nan_to_none(agg)}, fh)
            fh.write("\n")
        else:
            write_csv(fh, per + agg, VALIDATE_COLUMNS, json.dumps(config, sort_keys=True))
    return 0


def _nan_to_none(rows):
    return [{k: (None if isinstance(v, float) and v != v else v) for k, v in r.items()}
            for r in rows]


def cmd_sweep(args) -> int:
    try:
        spec = ExperimentSpec(n=args.n, alphas=args.alphas, instances_per_point=args.instances,
                              engines=args.engines, seed=args.seed, k=args.k,
                              tolerance=args.tol, max_iterations=args.max_iters,
                              flips=args.flips, mixing=args.mixing,
                              bias_threshold=args.bias_threshold, init=args.init,
                              workers=_workers(args))
    except ValueError as exc:
        print(f"cavity-tn: {exc}", file=sys.stderr)
        return EXIT_IO
    rows = run_sweep(spec)
    agg = aggregate_sweep(rows)
    with _output(args.out) as fh:
        if args.format == "json":
            payload = {"config": json.loads(spec.to_json()), "aggregates": agg}
            if args.runs:
                payload["runs"] = rows
            json.dump(payload, fh)
            fh.write("\n")
        else:
            write_csv(fh, agg, SWEEP_COLUMNS, spec.to_json())
            if args.runs:
                fh.write("\n")
                write_csv(fh, rows, RUN_COLUMNS)
    return 0


def cmd_bench(args) -> int:
    if args.shape == "lattice":
        res = bench_lattice(args.L, args.sweeps, args.seed)
    else:
        res = bench_ksat(args.n, args.alpha, args.sweeps, args.seed)
    res["seed"] = args.seed
    with _output(args.out) as fh:
        json.dump(res, fh)
        fh.write("\n")
    return 0


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "validate": cmd_validate,
            "sweep": cmd_sweep, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
