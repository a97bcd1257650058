import json

import pytest

from rbsde.cli import main
from rbsde.config import DEFAULTS, parse_config
from rbsde.exceptions import ConfigurationError

BALL_YAML = """
name: file-ball
horizon: 1.0
tube:
  ball: {center: [0.0, 0.0], radius_poly: [2.0, -0.5]}
noise: {brownian_dim: 1}
forward: {x0: [0.0], vol: [[0.5]]}
terminal: {family: constant, value: [0.5, 0.0]}
driver: {family: constant, value: [0.0, 0.0]}
run: {n_penalty: 8, steps: 16, paths: 500}
"""


def test_builtin_defaults():
    run, sc = parse_config("solve", scenario="constant")
    assert (run.steps, run.paths, run.seed, run.n_penalty) == (256, 10_000, 1, 64)
    assert run.n_list == DEFAULTS["n_list"] and sc.grid.steps == 256


def test_precedence_flags_over_file(tmp_path):
    cfg = tmp_path / "ball.yaml"
    cfg.write_text(BALL_YAML)
    run, _ = parse_config("solve", config=str(cfg))
    assert run.n_penalty == 8 and run.steps == 16
    run, _ = parse_config("solve", config=str(cfg), overrides={"n_penalty": 64})
    assert run.n_penalty == 64 and run.steps == 16


def test_json_config_accepted(tmp_path):
    import yaml

    cfg = tmp_path / "ball.json"
    cfg.write_text(json.dumps(yaml.safe_load(BALL_YAML)))
    run, sc = parse_config("solve", scenario=str(cfg))
    assert sc.name == "file-ball" and run.paths == 500


def test_misspelled_key_named(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(BALL_YAML.replace("radius_poly", "radiusp_oly"))
    with pytest.raises(ConfigurationError, match="radiusp_oly"):
        parse_config("solve", config=str(cfg))
    cfg.write_text(BALL_YAML.replace("n_penalty", "n_penalti"))
    with pytest.raises(ConfigurationError, match="run.n_penalti"):
        parse_config("solve", config=str(cfg))
    cfg.write_text(BALL_YAML.replace("value: [0.0, 0.0]", "value: [0.0, 0.0], slope: 1"))
    with pytest.raises(ConfigurationError, match="driver.slope"):
        parse_config("solve", config=str(cfg))


def test_non_monotone_offsets_rejected(tmp_path):
    cfg = tmp_path / "grow.yaml"
    cfg.write_text(BALL_YAML.replace("ball: {center: [0.0, 0.0], radius_poly: [2.0, -0.5]}",
                                     "halfspaces: [{normal: [1, 0], offset_poly: [1.0, 0.5]}, "
                                     "{normal: [-1, 0], offset_poly: [1.0]}, {normal: [0, 1], offset_poly: [1.0]}, "
                                     "{normal: [0, -1], offset_poly: [1.0]}]"))
    with pytest.raises(ConfigurationError, match="non-expansion"):
        parse_config("solve", config=str(cfg))


def test_bad_overrides():
    with pytest.raises(ConfigurationError, match="--paths"):
        parse_config("solve", scenario="constant", overrides={"paths": 0})
    with pytest.raises(ConfigurationError):
        parse_config("solve", scenario="no-such-scenario")


def test_solve_constant(tmp_path, capsys):
    assert main(["solve", "--scenario", "constant", "--steps", "16", "--paths", "500",
                 "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("Y0_mean=[0.5,-0.25]") and "tv_lambda=0" in line and "sup_dist_sq=0" in line
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert {"config_hash", "seed", "code_version"} <= set(manifest)
    header = (tmp_path / "Y.csv").read_text().splitlines()[0]
    assert header == "k,t,component,mean,std,min,q05,median,q95,max"


def test_validate_expanding_ball_exits_one(tmp_path, capsys):
    assert main(["validate", "--scenario", "expanding-ball", "--out", str(tmp_path)]) == 1
    assert "non-expansion" in capsys.readouterr().err


def test_validate_ok(tmp_path):
    assert main(["validate", "--scenario", "shrinking-ball-jumps", "--steps", "16",
                 "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "validation.json").read_text())["terminal_in_domain"]


def test_diagnose_writes_skorokhod(tmp_path):
    assert main(["diagnose", "--scenario", "binding-1d", "--steps", "32", "--paths", "500",
                 "--n-penalty", "128", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "skorokhod.json").read_text())
    assert report["alignment_min"] == 1.0


def test_sweep_twice_identical(tmp_path):
    args = ["sweep", "--scenario", "binding-1d", "--seed", "7", "--steps", "16", "--paths", "300",
            "--n-list", "4,8,16,32"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("report.json", "metrics.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_numerical_error_exit_code(tmp_path, monkeypatch):
    import rbsde.cli as cli
    from rbsde.exceptions import NumericalError

    def boom(*args, **kwargs):
        raise NumericalError("non-finite solution values at step 3", step=3)

    monkeypatch.setattr(cli, "backward_solve", boom)
    assert main(["solve", "--scenario", "constant", "--steps", "8", "--paths", "200",
                 "--out", str(tmp_path)]) == 2


def test_usage_errors():
    assert main(["explode"]) == 1
    assert main(["solve"]) == 1
