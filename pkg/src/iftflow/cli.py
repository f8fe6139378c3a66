"""Command-line interface.

Three subcommands:

* ``run`` executes one experiment (builtin name or a config.json path) with
  one method and writes losses.csv, trajectory.jsonl, config.json and the
  figures into the output directory.
* ``compare`` runs several methods of the same experiment, one subdirectory
  per method, plus a shared comparison figure.
* ``oracle-check`` exercises the closed-form oracles (interpolation decay,
  Euler consistency, QP grid oracle) and prints one PASS/FAIL line each.

The output directory comes from --out or the IFTFLOW_OUT environment
variable. Failures print a single JSON line to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .energy import MmdEnergy, mmd_squared
from .flows import euler_spherical_mmd, fit_decay_rate, interpolation_oracle
from .harness import (
    METHODS,
    ExperimentSpec,
    builtin_experiment,
    run_experiment,
    write_outputs,
)
from .kernels import KernelSpec
from .measures import uniform_measure
from .solvers import SimplexQp, brute_force_simplex, solve_qp_exact

OUT_ENV_VAR = "IFTFLOW_OUT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iftflow",
        description="Particle gradient flows for MMD-energy minimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment with one method")
    run_p.add_argument(
        "--experiment", required=True,
        help="builtin experiment name or path to a config.json",
    )
    run_p.add_argument("--method", choices=METHODS, default=None,
                       help="override the spec's method")
    run_p.add_argument("--out", default=None,
                       help=f"output directory (default: ${OUT_ENV_VAR})")
    run_p.add_argument("--seed", type=int, default=None, help="override the base seed")
    run_p.add_argument("--repeats", type=int, default=None, help="override the repeat count")
    run_p.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    cmp_p = sub.add_parser("compare", help="run several methods of one experiment")
    cmp_p.add_argument("--experiment", required=True,
                       help="builtin experiment name or path to a config.json")
    cmp_p.add_argument("--methods", required=True,
                       help="comma-separated method list, e.g. ift,mmd_flow,wfr")
    cmp_p.add_argument("--out", default=None,
                       help=f"output directory (default: ${OUT_ENV_VAR})")
    cmp_p.add_argument("--seed", type=int, default=None, help="override the base seed")
    cmp_p.add_argument("--repeats", type=int, default=None, help="override the repeat count")
    cmp_p.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    orc_p = sub.add_parser("oracle-check", help="verify the closed-form oracles")
    orc_p.add_argument("--seed", type=int, default=0)

    return parser


def _resolve_out(arg) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env)
    raise ValueError(f"no output directory: pass --out or set {OUT_ENV_VAR}")


def _load_spec(reference: str) -> ExperimentSpec:
    path = Path(reference)
    if path.suffix == ".json" or path.exists():
        with open(path) as handle:
            return ExperimentSpec.from_dict(json.load(handle))
    return builtin_experiment(reference)


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    updates: dict = {}
    if getattr(args, "method", None):
        updates["method"] = args.method
    if args.repeats is not None:
        updates["repeats"] = args.repeats
    if args.seed is not None:
        updates["flow"] = dataclasses.replace(spec.flow, seed=args.seed)
    return dataclasses.replace(spec, **updates) if updates else spec


def _cmd_run(args) -> None:
    spec = _apply_overrides(_load_spec(args.experiment), args)
    out = _resolve_out(args.out)
    summary = run_experiment(spec)
    write_outputs(summary, summary.example_trace, out)
    if not args.no_plots:
        plotting.plot_losses(summary, out / "losses.png")
        plotting.plot_trajectory(summary, out / "trajectory.png")
    print(
        f"{spec.name} [{spec.method}] x{len(summary.final_losses)} repeats: "
        f"final mean loss {summary.mean_loss[-1]:.3e} -> {out}"
    )
    for repeat, message in summary.failures:
        print(f"  repeat {repeat} failed: {message}", file=sys.stderr)


def _cmd_compare(args) -> None:
    base = _apply_overrides(_load_spec(args.experiment), args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ValueError("--methods must name at least one method")
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r} (choose from {', '.join(METHODS)})")
    out = _resolve_out(args.out)
    summaries = []
    for method in methods:
        spec = dataclasses.replace(base, method=method)
        summary = run_experiment(spec)
        write_outputs(summary, summary.example_trace, out / method)
        summaries.append(summary)
        print(
            f"{spec.name} [{method}] x{len(summary.final_losses)} repeats: "
            f"final mean loss {summary.mean_loss[-1]:.3e} -> {out / method}"
        )
    if not args.no_plots:
        plotting.plot_comparison(summaries, out / "comparison.png")


def _oracle_checks(seed: int) -> list:
    rng = np.random.default_rng(seed)
    checks = []

    # Interpolation path: squared MMD must decay exactly as e^{-2t}.
    worst = 0.0
    for _ in range(20):
        mu0 = uniform_measure(2.0 * rng.standard_normal((5, 2)))
        pi = uniform_measure(rng.standard_normal((4, 2)))
        for bandwidth in (0.5, 1.0, 10.0):
            energy = MmdEnergy(KernelSpec(bandwidth), pi)
            base = mmd_squared(energy, mu0)
            for t in (0.0, 0.25, 0.5, 1.0, 2.0):
                along = mmd_squared(energy, interpolation_oracle(mu0, pi, t))
                worst = max(worst, abs(along - np.exp(-2.0 * t) * base))
    checks.append(("interpolation-decay", worst <= 1e-10, f"max abs error {worst:.3e}"))

    # Euler discretization of the reaction flow against the closed form.
    mu0 = uniform_measure(2.0 * rng.standard_normal((5, 2)))
    pi = uniform_measure(rng.standard_normal((4, 2)))
    trace = euler_spherical_mmd(mu0, pi, h=1e-3, steps=2000)
    oracle = interpolation_oracle(mu0, pi, 2.0)
    weight_err = float(np.max(np.abs(trace.final_measure.weights - oracle.weights)))
    checks.append(("euler-weights", weight_err <= 5e-3, f"max weight error {weight_err:.3e}"))
    rate = fit_decay_rate(trace, (0, len(trace.losses)))
    checks.append(("euler-decay-rate", abs(rate + 2.0) <= 0.02, f"fitted rate {rate:.4f}"))

    # Exact QP solver against the brute-force grid oracle.
    gap = 0.0
    for _ in range(10):
        a = rng.standard_normal((3, 3))
        q = a @ a.T
        q *= 1.0 / max(np.linalg.eigvalsh(q).max(), 1.0)
        c = 0.5 * rng.standard_normal(3)
        qp = SimplexQp(q, c)
        exact = solve_qp_exact(qp, np.full(3, 1.0 / 3.0), tol=1e-10, max_iter=10_000)
        grid = brute_force_simplex(qp, resolution=1e-3)
        gap = max(gap, abs(qp.objective(exact) - qp.objective(grid)))
    checks.append(("qp-grid-oracle", gap <= 1e-6, f"max objective gap {gap:.3e}"))

    return checks


def _cmd_oracle_check(args) -> int:
    checks = _oracle_checks(args.seed)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in checks) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            _cmd_run(args)
            return 0
        if args.command == "compare":
            _cmd_compare(args)
            return 0
        return _cmd_oracle_check(args)
    except Exception as err:  # surface a structured error line for scripts
        print(json.dumps({"error": str(err), "type": type(err).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
