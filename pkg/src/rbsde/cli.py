"""Command-line entry point ``rbsde``.

::

    rbsde <validate|solve|sweep|diagnose> [--scenario S | --config F] [--steps N] [--paths M]
          [--n-penalty n] [--seed k] [--replications R] [--out DIR]

Exit codes: 0 success, 1 configuration or input error, 2 numerical error.
Every run writes ``manifest.json`` (config hash, seed, code version) into
the output directory.  ``RBSDE_THREADS`` caps worker threads (0 = auto).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, RunConfig, parse_config
from .exceptions import ConfigurationError, InputError, NumericalError
from .harness import SweepPlan, emit_report, run_sweep
from .noise import sample_paths
from .penalty import penalty_metrics, skorokhod_diagnostics
from .bsde_core import backward_solve

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2
VALIDATE_PATHS = 1000


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbsde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rbsde {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    src = parser.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="built-in scenario name or config file")
    src.add_argument("--config", help="scenario config file (YAML or JSON)")
    parser.add_argument("--steps", type=int, help="time steps N (default 256)")
    parser.add_argument("--paths", type=int, help="Monte Carlo paths M (default 10000)")
    parser.add_argument("--n-penalty", type=int, dest="n_penalty", help="penalty level n (default 64)")
    parser.add_argument("--n-list", dest="n_list", help="sweep levels, comma separated")
    parser.add_argument("--seed", type=int, help="random seed (default 1)")
    parser.add_argument("--replications", type=int, help="sweep replications R (default 3)")
    parser.add_argument("--degree", type=int, help="polynomial basis degree (default 2)")
    parser.add_argument("--out", help="output directory (default rbsde-out)")
    return parser


def _overrides(args) -> dict:
    out = {key: getattr(args, key) for key in
           ("steps", "paths", "n_penalty", "seed", "replications", "degree", "out")}
    if args.n_list is not None:
        try:
            out["n_list"] = [int(v) for v in args.n_list.split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError(f"--n-list: not a comma-separated integer list: {args.n_list!r}")
    return out


def _dump_json(path: Path, data):
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def write_manifest(run: RunConfig, out: Path, extra=None):
    manifest = {
        "code_version": __version__,
        "command": run.command,
        "config_hash": run.digest(),
        "config": run.to_dict(),
        "seed": run.seed,
        "scenario": run.scenario.get("name"),
        "source": run.source,
    }
    manifest.update(extra or {})
    _dump_json(out / "manifest.json", manifest)


def _quantity_rows(name, values, times):
    """Per (step, component) summary statistics across paths."""
    M, K = values.shape[:2]
    flat = values.reshape(M, K, -1)
    comps = list(np.ndindex(*values.shape[2:])) or [()]
    for k in range(K):
        for c, comp in enumerate(comps):
            col = flat[:, k, c]
            label = ".".join(str(i) for i in comp) or "0"
            stats = [col.mean(), col.std(), col.min(), *np.quantile(col, (0.05, 0.5, 0.95)), col.max()]
            yield [k, repr(float(times[k])), label, *(repr(float(v)) for v in stats)]


def write_solution(sol, out: Path):
    times = sol.grid.times
    quantities = {"Y": (sol.Y, times), "Lambda": (sol.Lambda, times), "dLambda": (sol.dLambda, times[:-1])}
    if sol.Z is not None:
        quantities["Z"] = (sol.Z, times[:-1])
        quantities["U"] = (sol.U, times[:-1])
    for name, (values, tt) in quantities.items():
        if values.size == 0:
            continue
        with open(out / f"{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "t", "component", "mean", "std", "min", "q05", "median", "q95", "max"])
            writer.writerows(_quantity_rows(name, values, tt))


def _solve(run, scenario):
    bundle = sample_paths(scenario.grid, scenario.noise, run.paths, run.seed)
    sol = backward_solve(scenario, bundle, run.regression_basis, penalty=run.n_penalty)
    return sol, penalty_metrics(sol, scenario.tube)


def _summary(sol, metrics):
    y0 = sol.Y0.mean(axis=0)
    y0_text = ",".join(f"{v:.6g}" for v in y0)
    return (f"Y0_mean=[{y0_text}] tv_lambda={metrics['tv_lambda'][0]:.6g} "
            f"sup_dist_sq={metrics['sup_dist_sq'][0]:.6g}")


def _metrics_json(sol, metrics):
    return {
        "Y0_mean": sol.Y0.mean(axis=0).tolist(),
        "n_penalty": sol.penalty,
        "metrics": {k: {"estimate": v[0], "stderr": v[1]} for k, v in metrics.items()},
    }


def run_command(run: RunConfig, scenario) -> int:
    out = Path(run.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    write_manifest(run, out)
    if run.command == "validate":
        bundle = sample_paths(scenario.grid, scenario.noise, min(run.paths, VALIDATE_PATHS), run.seed)
        findings = scenario.validate(bundle)
        _dump_json(out / "validation.json", findings)
        print(f"valid: {scenario.name} (d={scenario.dim}, N={scenario.grid.steps}, "
              f"Lipschitz ratio {findings['lipschitz_ratio']:.4g} <= {scenario.lipschitz:.4g})")
        return EXIT_OK
    if run.command in ("solve", "diagnose"):
        scenario.validate()
        sol, metrics = _solve(run, scenario)
        write_solution(sol, out)
        _dump_json(out / "summary.json", _metrics_json(sol, metrics))
        if run.command == "diagnose":
            report = skorokhod_diagnostics(sol, scenario.tube)
            _dump_json(out / "skorokhod.json", report.to_dict())
            print(_summary(sol, metrics) + f" alignment_min={report.alignment_min:.6g} "
                  f"interior_mass_fraction={report.interior_mass_fraction:.6g} "
                  f"variational_gap={report.variational_gap:.3g}")
        else:
            print(_summary(sol, metrics))
        return EXIT_OK
    plan = SweepPlan(run.scenario, run.n_list, run.paths, run.steps, run.replications,
                     run.seed, run.regression_basis)
    report = run_sweep(plan, scenario)
    emit_report(report, out)
    slopes = " ".join(
        f"{name}={'null' if fit is None else format(fit['slope'], '.4g')}"
        for name, fit in sorted(report.slopes.items())
    )
    if not report.complete:
        print(f"sweep incomplete: {report.error}", file=sys.stderr)
        return EXIT_NUMERICAL
    last = report.levels[-1]
    print(f"n={last['n']} tv_lambda={last['metrics']['tv_lambda']['estimate']:.6g} "
          f"sup_dist_sq={last['metrics']['sup_dist_sq']['estimate']:.6g} {slopes}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        run, scenario = parse_config(args.command, args.scenario, args.config, _overrides(args))
        return run_command(run, scenario)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigurationError, InputError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
