"""Penalty-level sweeps, convergence-rate fits and report files.

A sweep solves the penalized problem for every level in ``n_list`` on the
same path bundle (common random numbers), so the Cauchy gap between
consecutive levels is a paired pathwise statistic.  Each replication uses
its own bundle (seed ``seed_base + r``).  Point estimates are pooled means
over all paths; standard errors are the spread of the replication means.

Rates are log-log least-squares slopes.  Points whose estimate does not
exceed ten standard errors (or is not positive) sit in the Monte Carlo or
discretization floor and are excluded; the fit uses the longest run of
consecutive usable levels and needs at least three of them.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from ._parallel import thread_count
from .bsde_core import RegressionBasis, Scenario, backward_sweep
from .exceptions import InputError, RBSDEError
from .noise import sample_paths
from .penalty import METRICS

SCHEMA_VERSION = 1
FLOOR_FACTOR = 10.0
MIN_FIT_POINTS = 3
DEFAULT_N_LIST = (4, 8, 16, 32, 64, 128, 256, 512)

SLOPE_SOURCES = {
    "slope_sup": "sup_dist_sq",
    "slope_int": "int_dist_sq",
    "slope_cauchy": "cauchy_sq",
}


@dataclass(frozen=True)
class SweepPlan:
    """What to run: a scenario (registry name or config dictionary) and the sweep sizes."""

    scenario: Union[str, dict]
    n_list: Sequence[int] = DEFAULT_N_LIST
    paths: int = 10_000
    steps: int = 256
    replications: int = 3
    seed_base: int = 1
    basis: RegressionBasis = RegressionBasis()

    def __post_init__(self):
        n_list = tuple(int(n) for n in self.n_list)
        if any(n < 1 for n in n_list):
            raise InputError("penalty levels must be positive")
        if any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise InputError(f"n_list must be strictly increasing, got {list(n_list)}")
        object.__setattr__(self, "n_list", n_list)
        if self.replications < 3:
            raise InputError("error bars need at least 3 replications")
        if self.paths < 2 or self.steps < 1:
            raise InputError("paths must be >= 2 and steps >= 1")

    def resolve(self) -> Scenario:
        from .scenarios import build_scenario, registered

        cfg = registered(self.scenario) if isinstance(self.scenario, str) else self.scenario
        return build_scenario(cfg, self.steps)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "n_list": list(self.n_list),
            "paths": int(self.paths),
            "steps": int(self.steps),
            "replications": int(self.replications),
            "seed_base": int(self.seed_base),
            "basis": self.basis.to_dict(),
        }


@dataclass
class RateFit:
    """Log-log fit ``log value = slope log n + intercept``; ``slope is None`` when undefined."""

    slope: Optional[float] = None
    intercept: Optional[float] = None
    half_width: Optional[float] = None
    n_used: List[int] = field(default_factory=list)

    @property
    def defined(self) -> bool:
        return self.slope is not None

    @property
    def constant(self) -> Optional[float]:
        """Measured constant ``c`` in ``value ~ c n^slope``."""
        return None if self.intercept is None else math.exp(self.intercept)

    def to_dict(self):
        out = asdict(self)
        out["constant"] = self.constant
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(data["slope"], data["intercept"], data["half_width"], list(data["n_used"]))


def _usable(values, stderr):
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values) & (values > 0)
    if stderr is not None:
        stderr = np.asarray(stderr, dtype=float)
        ok &= values > FLOOR_FACTOR * np.where(np.isfinite(stderr), stderr, np.inf)
    return ok


def _longest_run(mask):
    best, start = (0, 0), None
    for i, flag in enumerate(list(mask) + [False]):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return best


def fit_rate(points, stderr=None) -> RateFit:
    """Ordinary least squares of ``log value`` on ``log n``.

    ``points`` is a sequence of ``(n, value)``.  With ``stderr`` the
    noise-floor rule applies (value must exceed ten standard errors).
    Fewer than three usable consecutive points give an undefined fit.
    ``half_width`` is twice the slope's standard error.
    """
    points = list(points)
    if not points:
        return RateFit()
    ns = np.array([p[0] for p in points], dtype=float)
    values = np.array([p[1] for p in points], dtype=float)
    lo, hi = _longest_run(_usable(values, stderr))
    if hi - lo < MIN_FIT_POINTS:
        return RateFit()
    x = np.log(ns[lo:hi])
    y = np.log(values[lo:hi])
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([slope, intercept])
    dof = x.size - 2
    sxx = float(np.sum((x - x.mean()) ** 2))
    slope_se = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return RateFit(float(slope), float(intercept), 2.0 * slope_se, [int(n) for n in ns[lo:hi]])


@dataclass
class RateReport:
    """Sweep results: per-level metrics, paired Cauchy gaps and fitted slopes."""

    scenario: str
    plan: dict
    levels: list = field(default_factory=list)  # [{"n", "metrics": {name: {"estimate", "stderr"}}}]
    cauchy: list = field(default_factory=list)  # [{"n", "m", "estimate", "stderr"}]
    slopes: dict = field(default_factory=dict)  # {slope name: RateFit dict or None}
    replications_completed: int = 0
    complete: bool = True
    error: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def metric(self, name):
        """``(n_list, estimates, stderrs)`` arrays for one metric (or ``cauchy_sq``)."""
        if name == "cauchy_sq":
            rows = [(c["n"], c["estimate"], c["stderr"]) for c in self.cauchy]
        else:
            rows = [(lv["n"], lv["metrics"][name]["estimate"], lv["metrics"][name]["stderr"])
                    for lv in self.levels]
        if not rows:
            return np.zeros(0, dtype=int), np.zeros(0), np.zeros(0)
        n, est, se = zip(*rows)
        return np.array(n), np.array(est, dtype=float), np.array(se, dtype=float)

    def slope(self, name) -> RateFit:
        data = self.slopes.get(name)
        return RateFit() if data is None else RateFit.from_dict(data)

    def variation(self, name) -> Optional[float]:
        """``(max - min) / min`` of a metric across the sweep."""
        _, est, _ = self.metric(name)
        if est.size == 0 or est.min() <= 0:
            return None
        return float((est.max() - est.min()) / est.min())

    def to_dict(self):
        return _json_clean(asdict(self))

    @classmethod
    def from_dict(cls, data):
        if data.get("schema_version") != SCHEMA_VERSION:
            raise InputError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(**data)


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.ndarray):
        return _json_clean(obj.tolist())
    return obj


def sweep_paths(scenario: Scenario, bundle, n_list, basis: RegressionBasis = RegressionBasis()):
    """Per-path metrics for every level on one bundle.

    Returns ``{metric: (L, M) array}`` plus ``"cauchy_sq"`` of shape
    ``(L - 1, M)`` holding ``sup_k |Y^{n_l}_k - Y^{n_{l+1}}_k|^2``.
    """
    tube, grid = scenario.tube, scenario.grid
    L, M = len(n_list), bundle.n_paths
    sup_d = np.zeros((L, M))
    int_d = np.zeros((L, M))
    tv = np.zeros((L, M))
    sup_y = np.zeros((L, M))
    cauchy = np.zeros((max(L - 1, 0), M))
    for k, y, _z, _u, d_lambda, _info in backward_sweep(scenario, bundle, basis, list(n_list)):
        t = grid.times[k]
        dist_sq = np.stack([tube.distance(t, y[level]) for level in range(L)]) ** 2
        np.maximum(sup_d, dist_sq, out=sup_d)
        if k < grid.steps:
            int_d += dist_sq * grid.dt
        tv += np.linalg.norm(d_lambda, axis=2)
        np.maximum(sup_y, np.sum(y ** 2, axis=2), out=sup_y)
        if L > 1:
            np.maximum(cauchy, np.sum((y[1:] - y[:-1]) ** 2, axis=2), out=cauchy)
    return {"sup_dist_sq": sup_d, "int_dist_sq": int_d, "tv_lambda": tv, "sup_Y_sq": sup_y,
            "cauchy_sq": cauchy}


def _replication(plan: SweepPlan, scenario: Scenario, r: int):
    bundle = sample_paths(scenario.grid, scenario.noise, plan.paths, plan.seed_base + r)
    per_path = sweep_paths(scenario, bundle, plan.n_list, plan.basis)
    # keep only the per-replication means and path variances: O(L) memory per cell
    return {name: (v.mean(axis=1), v.var(axis=1, ddof=1)) for name, v in per_path.items()}


def _pool(results, paths):
    """Pooled mean and standard error from equal-size replications, merged in order."""
    means = np.stack([r[0] for r in results])  # (R, L)
    estimate = means.mean(axis=0)
    if len(results) > 1:
        stderr = means.std(axis=0, ddof=1) / math.sqrt(len(results))
    else:
        stderr = np.sqrt(results[0][1] / paths)
    return estimate, stderr


def run_sweep(plan: SweepPlan, scenario: Optional[Scenario] = None) -> RateReport:
    """Run all replications of ``plan`` and assemble a :class:`RateReport`.

    A solver error stops the sweep; the report then holds the replications
    finished before it, ``complete=False`` and the error message.
    """
    scenario = scenario if scenario is not None else plan.resolve()
    scenario.validate()
    report = RateReport(scenario=scenario.name, plan=plan.to_dict())
    workers = max(1, min(thread_count(), plan.replications))
    results = []
    if workers == 1:
        for r in range(plan.replications):
            try:
                results.append(_replication(plan, scenario, r))
            except RBSDEError as exc:
                report.complete, report.error = False, f"replication {r}: {exc}"
                break
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_replication, plan, scenario, r) for r in range(plan.replications)]
            for r, fut in enumerate(futures):  # fixed-order merge
                try:
                    results.append(fut.result())
                except RBSDEError as exc:
                    report.complete, report.error = False, f"replication {r}: {exc}"
                    for later in futures[r + 1:]:
                        later.cancel()
                    break
    report.replications_completed = len(results)
    if not results:
        report.slopes = {name: None for name in SLOPE_SOURCES}
        return report
    pooled = {name: _pool([res[name] for res in results], plan.paths) for name in (*METRICS, "cauchy_sq")}
    n_list = plan.n_list
    for i, n in enumerate(n_list):
        report.levels.append({
            "n": n,
            "metrics": {name: {"estimate": pooled[name][0][i], "stderr": pooled[name][1][i]}
                        for name in METRICS},
        })
    est, se = pooled["cauchy_sq"]
    for i in range(len(n_list) - 1):
        report.cauchy.append({"n": n_list[i], "m": n_list[i + 1], "estimate": est[i], "stderr": se[i]})
    for slope_name, metric in SLOPE_SOURCES.items():
        ns, values, errs = report.metric(metric)
        fit = fit_rate(list(zip(ns, values)), errs)
        report.slopes[slope_name] = fit.to_dict() if fit.defined else None
    report.levels = _json_clean(report.levels)
    report.cauchy = _json_clean(report.cauchy)
    return report


# output ----------------------------------------------------------------------

def report_json(report: RateReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def metrics_csv(report: RateReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "metric", "estimate", "stderr"])
    for level in report.levels:
        for name in METRICS:
            m = level["metrics"][name]
            writer.writerow([level["n"], name, _fmt(m["estimate"]), _fmt(m["stderr"])])
    return buf.getvalue()


def _fmt(value):
    return "nan" if value is None else repr(float(value))


def plot_series(report: RateReport, name) -> str:
    """Whitespace-separated ``log10 n  log10 value`` rows; non-positive values are skipped."""
    ns, est, _ = report.metric(name)
    lines = [f"# log10(n) log10({name})"]
    for n, v in zip(ns, est):
        if np.isfinite(v) and v > 0:
            lines.append(f"{math.log10(n):.12g} {math.log10(v):.12g}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_report(report: RateReport, out_dir) -> List[Path]:
    """Write ``report.json``, ``metrics.csv`` and ``plotdata/<metric>.dat``; return the paths."""
    out = Path(out_dir)
    plot_dir = out / "plotdata"
    try:
        plot_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {plot_dir}: {exc.strerror or exc}") from exc
    written = []
    for name, text in (("report.json", report_json(report)), ("metrics.csv", metrics_csv(report))):
        _write(out / name, text)
        written.append(out / name)
    for name in (*METRICS, "cauchy_sq"):
        path = plot_dir / f"{name}.dat"
        _write(path, plot_series(report, name))
        written.append(path)
    return written


def load_report(path) -> RateReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return RateReport.from_dict(json.loads(path.read_text()))
