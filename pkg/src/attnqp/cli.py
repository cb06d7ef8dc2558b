"""``attnqp`` command line: generate, solve, emulate, compare, bench, toy, parity.

Every command writes its artifacts under ``--out`` (a directory, created if
needed) together with ``manifest.json`` recording the command, its arguments,
the seed, host and git description, and a sha256 for each artifact.

Exit codes: 0 success, 2 validation or equivalence failure, 1 operational error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import platform
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .qp_core import (
    ConvergenceError,
    QpValidationError,
    Variant,
    dump_instances,
    load_instances,
)

log = logging.getLogger("attnqp")

EXIT_OK, EXIT_OPERATIONAL, EXIT_VALIDATION = 0, 1, 2

# per-iterate l-inf budgets for machine vs classical trajectories
EQUIV_BUDGET = {Variant.UNCONSTRAINED: 1e-9, Variant.LINEARLY_CONSTRAINED: 1e-9, Variant.L1_REGULARIZED: 1e-9, Variant.L1_CONSTRAINED: 1e-7}
REFERENCE_TOL = 1e-10
REFERENCE_MAX_ITERS = 1_000_000


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _git_describe() -> str | None:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if res.returncode != 0:
        return None
    return res.stdout.strip() or None


def _write_manifest(out: Path, args: argparse.Namespace, artifacts: list[Path]) -> Path:
    argv = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "args": argv,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "backend": kernels.BACKEND,
        "git_describe": _git_describe(),
        "host": platform.node(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "artifact": [{"path": p.name, "sha256": _sha256(p)} for p in artifacts],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_ndjson(path: Path, records) -> Path:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def _load(path: str, variant: str | None = None):
    instances = load_instances(path)
    if not instances:
        raise QpValidationError(f"no instances in {path}")
    if variant is not None:
        want = Variant.parse(variant)
        bad = [i for i, inst in enumerate(instances) if inst.variant is not want]
        if bad:
            raise QpValidationError(f"line {bad[0] + 1} of {path} is {instances[bad[0]].variant.value}, expected {want.value}")
    return instances


def _reference(inst, tol=REFERENCE_TOL, max_iters=REFERENCE_MAX_ITERS):
    from .solvers import SolveConfig, run

    return run(inst, cfg=SolveConfig(max_iters=max_iters, tol=tol, record_trace=False))


def _solution_record(index: int, trace) -> dict:
    rec = {"index": index, "x": trace.x.tolist()}
    if trace.lam is not None:
        rec["lam"] = trace.lam.tolist()
    rec.update(residual=trace.residuals[-1], iterations=trace.iterations, converged=trace.converged)
    return rec


# -- commands -------------------------------------------------------------------


def cmd_gen(args, out: Path) -> list[Path]:
    from .factory import generate_baseline, generate_kappa_shifted

    if (args.kappa_low is None) != (args.kappa_high is None):
        raise QpValidationError("--kappa-low and --kappa-high go together")
    if args.count < 1:
        raise QpValidationError("--count must be >= 1")
    instances = []
    for i in range(args.count):
        seed = args.seed + i
        if args.kappa_low is None:
            instances.append(generate_baseline(args.n, args.m, args.variant, seed))
        else:
            instances.append(
                generate_kappa_shifted(args.n, args.m, (args.kappa_low, args.kappa_high), seed, args.frob_target, args.variant)
            )
    paths = [out / "instances.ndjson"]
    dump_instances(instances, paths[0])
    if not args.no_solutions:
        sols = [_solution_record(i, _reference(inst)) for i, inst in enumerate(instances)]
        paths.append(_write_ndjson(out / "solutions.ndjson", sols))
    return paths


def cmd_solve(args, out: Path) -> list[Path]:
    from .solvers import SolveConfig, run

    instances = _load(args.dataset, args.variant)
    sols, paths = [], []
    for i, inst in enumerate(instances):
        tr = run(inst, cfg=SolveConfig(max_iters=args.max_iters, tol=args.tol, record_trace=args.trace))
        sols.append(_solution_record(i, tr))
        if args.trace:
            paths.append(out / f"trace_{i:05d}.csv")
            tr.to_csv(paths[-1], impl="classical")
    return [_write_ndjson(out / "solutions.ndjson", sols), *paths]


def cmd_emulate(args, out: Path) -> list[Path]:
    from .machine import build_machine

    instances = _load(args.dataset, args.variant)
    paths = []
    for i, inst in enumerate(instances):
        tr = build_machine(inst).run_layers(args.layers)
        paths.append(out / f"machine_{i:05d}.csv")
        tr.to_csv(paths[-1], impl="machine")
    return paths


def compare_instance(inst, layers: int, x_star=None):
    """Per-layer rows ``(iter, dist_classical, dist_machine, impl_gap)`` for one instance."""
    from .machine import build_machine
    from .solvers import SolveConfig, run

    if x_star is None:
        x_star = _reference(inst).x
    ref = run(inst, cfg=SolveConfig(max_iters=layers, tol=0.0))
    mach = build_machine(inst).run_layers(layers)
    xr, xm = np.asarray(ref.iterates), np.asarray(mach.iterates)
    gap = np.max(np.abs(xr - xm), axis=1)
    if ref.duals:
        gap = np.maximum(gap, np.max(np.abs(np.asarray(ref.duals) - np.asarray(mach.duals)), axis=1))
    dc = np.linalg.norm(xr - x_star, axis=1)
    dm = np.linalg.norm(xm - x_star, axis=1)
    return [(k, float(dc[k]), float(dm[k]), float(gap[k])) for k in range(len(gap))]


def cmd_compare(args, out: Path) -> list[Path]:
    instances = _load(args.dataset, args.variant)
    rows, worst = [], 0.0
    for i, inst in enumerate(instances):
        for rec in compare_instance(inst, args.layers):
            rows.append((i, *rec))
            worst = max(worst, rec[3])
    path = _write_csv(out / "compare.csv", ["instance_id", "iter", "dist_classical", "dist_machine", "impl_gap"], rows)
    budget = EQUIV_BUDGET[instances[0].variant]
    print(f"max impl_gap {worst:.3e} (budget {budget:.0e}) over {len(instances)} instances")
    return [path], (f"impl_gap {worst:.3e} exceeds {budget:.0e}" if worst > budget else None)


def cmd_bench(args, out: Path) -> list[Path]:
    from .bench import bench_grid, cpu_model, default_dims

    variants = list(Variant) if args.variant == "all" else [Variant.parse(args.variant)]
    found = kernels.backends()
    if args.backend == "all":
        backends = list(found.values())
    elif args.backend in found:
        backends = [found[args.backend]]
    else:
        raise QpValidationError(f"backend {args.backend!r} is not available (have {sorted(found)})")
    records = []
    for be in backends:
        for v in variants:
            records += bench_grid(v, default_dims(v, args.sizes), args.reps, args.warmup, args.seed, be, mode=args.mode)
    header = list(records[0].as_dict())
    csv_path = _write_csv(out / "bench.csv", header, [list(r.as_dict().values()) for r in records])
    env = {
        "cpu_model": cpu_model(),
        "reps": args.reps,
        "warmup": args.warmup,
        "mode": args.mode,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    json_path = out / "bench.json"
    json_path.write_text(json.dumps({"environment": env, "records": [r.as_dict() for r in records]}, indent=2) + "\n")
    for r in records:
        print(f"{r.backend:>6} {r.variant:>2} n={r.n:<4} m={r.m:<3} classical {r.classical_ms * 1e3:8.3f}us  machine {r.machine_ms * 1e3:8.3f}us  x{r.overhead:.2f}")
    return [csv_path, json_path]


def cmd_toy(args, out: Path) -> list[Path]:
    from .toy import ToyConfig, ToyResult, run_monte_carlo

    cfg = ToyConfig(args.tau2, args.sigma2, args.risk_aversion, tuple(args.n_grid), args.trials, args.seed, args.chunk_size)
    res = run_monte_carlo(cfg)
    path = _write_csv(out / "toy.csv", ToyResult.CSV_COLUMNS, res.csv_rows())
    meta = out / "toy_meta.json"
    config = {k: getattr(args, k) for k in ("tau2", "sigma2", "risk_aversion", "n_grid", "trials", "seed", "chunk_size")}
    meta.write_text(json.dumps({"config": config, **res.meta}, indent=2) + "\n")
    for r in res.per_n:
        print(f"n={r.n:<5} rho={r.rho:.4f} regret pto {r.regret_pto[0]:.3e} e2e {r.regret_e2e[0]:.3e} gap {r.gap[0]:.3e} ({r.gap[0] / r.gap[1]:.1f} se)")
    return [path, meta]


def cmd_parity(args, out: Path) -> list[Path]:
    from .parity import even_statistic_gap, flip_oddness_check, second_moment

    rng = np.random.default_rng(args.seed)
    max_odd, min_margin = 0.0, np.inf
    for _ in range(args.draws):
        x = rng.standard_normal((args.tokens, args.n))
        m_map = rng.standard_normal((args.n, args.n))
        v_map = rng.standard_normal((args.n, args.n))
        max_odd = max(max_odd, flip_oddness_check(x, m_map, v_map))
        reducer = rng.standard_normal((args.n * args.n, args.tokens * args.n))
        floor = np.linalg.norm(second_moment(x), "fro")
        min_margin = min(min_margin, even_statistic_gap(x, m_map, v_map, reducer) - floor)
    print(f"max oddness residual {max_odd:.3e}")
    print(f"min error-floor margin {min_margin:.3e}")
    path = out / "parity.json"
    path.write_text(json.dumps({"draws": args.draws, "max_oddness_residual": max_odd, "min_floor_margin": float(min_margin)}, indent=2) + "\n")
    return [path], ("parity witness violated" if max_odd > 1e-12 or min_margin < -1e-9 else None)


# -- parser ---------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attnqp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        sp.set_defaults(func=func)
        return sp

    variants = [v.value for v in Variant]

    sp = command("gen", cmd_gen, "generate a dataset of random instances")
    sp.add_argument("--variant", choices=variants, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int, default=0)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--kappa-low", type=float)
    sp.add_argument("--kappa-high", type=float)
    sp.add_argument("--frob-target", type=float)
    sp.add_argument("--no-solutions", action="store_true", help="skip the reference solutions file")

    sp = command("solve", cmd_solve, "solve every instance with the classical method")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--variant", choices=variants)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iters", type=int, default=100_000)
    sp.add_argument("--trace", action="store_true", help="also write per-instance trace CSVs")

    sp = command("emulate", cmd_emulate, "run the attention machine for a fixed number of layers")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--variant", choices=variants)
    sp.add_argument("--layers", type=int, default=200)

    sp = command("compare", cmd_compare, "per-layer machine vs classical trajectories")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--variant", choices=variants)
    sp.add_argument("--layers", type=int, default=200)

    sp = command("bench", cmd_bench, "per-step timing, classical vs machine")
    sp.add_argument("--variant", choices=variants + ["all"], default="all")
    sp.add_argument("--sizes", type=_int_list, default=[16, 32, 64, 128])
    sp.add_argument("--reps", type=int, default=30)
    sp.add_argument("--warmup", type=int, default=5)
    sp.add_argument("--backend", default="all", help="cython, numpy or all")
    sp.add_argument("--mode", choices=["fused", "call"], default="fused")

    sp = command("toy", cmd_toy, "two-asset shrinkage Monte Carlo")
    sp.add_argument("--tau2", type=float, default=0.01)
    sp.add_argument("--sigma2", type=float, default=0.5)
    sp.add_argument("--lambda", dest="risk_aversion", type=float, default=0.2)
    sp.add_argument("--n-grid", type=_int_list, default=[10, 25, 50, 100, 250, 500, 1000])
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--chunk-size", type=int, default=100_000)

    sp = command("parity", cmd_parity, "flip-oddness witness for pure-data linear attention")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--tokens", type=int, default=8)
    sp.add_argument("--draws", type=int, default=1000)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        result = args.func(args, out)
        artifacts, failure = result if isinstance(result, tuple) else (result, None)
        _write_manifest(out, args, artifacts)
    except QpValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ConvergenceError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL
    if failure:
        print(f"failed: {failure}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
