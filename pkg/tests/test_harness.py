import json

import numpy as np
import pytest

import rbsde.harness as harness
from rbsde.bsde_core import backward_solve
from rbsde.exceptions import InputError, NumericalError
from rbsde.harness import (
    RateReport,
    SweepPlan,
    emit_report,
    fit_rate,
    load_report,
    metrics_csv,
    report_json,
    run_sweep,
    sweep_paths,
)
from rbsde.noise import sample_paths
from rbsde.penalty import METRICS, path_metrics
from rbsde.scenarios import scenario

SMALL = dict(n_list=(4, 8, 16, 32), paths=600, steps=32, replications=3)


def test_fit_rate_exact_power_laws():
    fit = fit_rate([(n, 1.0 / n) for n in (4, 8, 16)])
    assert fit.slope == pytest.approx(-1.0, abs=1e-12) and fit.half_width == pytest.approx(0.0, abs=1e-12)
    assert fit_rate([(n, 3.0 / n ** 2) for n in (4, 8, 16, 32)]).slope == pytest.approx(-2.0, abs=1e-12)
    assert fit_rate([(n, 3.0 / n ** 2) for n in (4, 8, 16, 32)]).constant == pytest.approx(3.0)


def test_fit_rate_noisy():
    rng = np.random.default_rng(0)
    ns = [4, 8, 16, 32, 64, 128, 256, 512]
    fit = fit_rate([(n, (1 + 0.01 * rng.standard_normal()) / n) for n in ns])
    assert -1.05 <= fit.slope <= -0.95
    assert fit.half_width > 0


def test_fit_rate_undefined_and_floor():
    assert not fit_rate([(4, 0.25), (8, 0.125)]).defined
    assert not fit_rate([(n, 0.0) for n in (4, 8, 16, 32)]).defined
    assert not fit_rate([]).defined
    values = [(4, 1 / 4), (8, 1 / 8), (16, 1 / 16), (32, 1 / 32), (64, 1e-3)]
    stderr = [1e-4, 1e-4, 1e-4, 1e-4, 5e-4]  # the last point sits in the noise floor
    fit = fit_rate(values, stderr)
    assert fit.n_used == [4, 8, 16, 32] and fit.slope == pytest.approx(-1.0)


def test_plan_invariants():
    with pytest.raises(InputError):
        SweepPlan("binding-1d", n_list=(8, 4))
    with pytest.raises(InputError):
        SweepPlan("binding-1d", replications=2)


def test_non_binding_sweep_has_null_slopes():
    report = run_sweep(SweepPlan("martingale", **SMALL))
    assert report.complete and report.replications_completed == 3
    assert all(v is None for v in report.slopes.values())
    for name in ("sup_dist_sq", "int_dist_sq", "tv_lambda"):
        assert np.all(report.metric(name)[1] == 0)
    assert np.all(report.metric("cauchy_sq")[1] == 0)


def test_sweep_matches_separate_solves():
    sc = scenario("binding-1d", 32)
    b = sample_paths(sc.grid, sc.noise, 500, seed=3)
    per_path = sweep_paths(sc, b, [4, 8])
    sols = [backward_solve(sc, b, penalty=n, keep_zu=False) for n in (4, 8)]
    for level, sol in enumerate(sols):
        ref = path_metrics(sol, sc.tube)
        for name in METRICS:
            np.testing.assert_allclose(per_path[name][level], ref[name], rtol=1e-12, atol=1e-15)
    paired = np.max(np.sum((sols[0].Y - sols[1].Y) ** 2, axis=2), axis=1)
    np.testing.assert_allclose(per_path["cauchy_sq"][0], paired, rtol=1e-12)


def test_binding_sweep_report_shape(tmp_path):
    report = run_sweep(SweepPlan("binding-1d", **SMALL))
    assert [lv["n"] for lv in report.levels] == [4, 8, 16, 32]
    assert [(c["n"], c["m"]) for c in report.cauchy] == [(4, 8), (8, 16), (16, 32)]
    assert report.slope("slope_sup").defined
    files = emit_report(report, tmp_path)
    assert {p.name for p in files} >= {"report.json", "metrics.csv", "sup_dist_sq.dat", "cauchy_sq.dat"}
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert rows[0] == "n,metric,estimate,stderr"
    assert len(rows) - 1 == 4 * len(SMALL["n_list"])
    back = load_report(tmp_path)
    assert back.to_dict() == report.to_dict()
    assert json.loads((tmp_path / "report.json").read_text())["schema_version"] == harness.SCHEMA_VERSION
    dat = np.loadtxt(tmp_path / "plotdata" / "sup_dist_sq.dat")
    assert dat.shape == (4, 2)
    np.testing.assert_allclose(dat[:, 0], np.log10(SMALL["n_list"]))


def test_empty_report_is_valid_json(tmp_path):
    report = RateReport(scenario="none", plan={})
    emit_report(report, tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["levels"] == [] and data["cauchy"] == []
    assert (tmp_path / "metrics.csv").read_text() == "n,metric,estimate,stderr\n"


def test_partial_report_on_solver_error(monkeypatch):
    real = harness._replication

    def flaky(plan, sc, r):
        if r == 1:
            raise NumericalError("boom", step=3)
        return real(plan, sc, r)

    monkeypatch.setattr(harness, "_replication", flaky)
    monkeypatch.setenv("RBSDE_THREADS", "1")
    report = run_sweep(SweepPlan("binding-1d", **SMALL))
    assert not report.complete and report.replications_completed == 1
    assert "boom" in report.error
    assert len(report.levels) == 4


def test_deterministic_across_thread_counts(monkeypatch):
    outputs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("RBSDE_THREADS", threads)
        report = run_sweep(SweepPlan("binding-1d", seed_base=7, **SMALL))
        outputs.append((report_json(report), metrics_csv(report)))
    assert outputs[0] == outputs[1]


def test_emit_report_surfaces_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_report(RateReport(scenario="none", plan={}), blocker / "sub")
