"""Run configuration: scenario files, defaults and command-line overrides.

A config file (YAML or JSON) holds one scenario definition and an optional
``run`` section::

    name: my-ball
    horizon: 2.0
    tube:
      ball: {center: [0, 0], radius_poly: [2.0, -0.5]}   # or halfspaces: [{normal, offset_poly}]
    noise: {brownian_dim: 2, marks: [[0.3, 0], [0, -0.3]], intensities: [1, 2]}
    forward: {x0: [0, 0], vol: [[0.3, 0], [0, 0.3]], jump_sizes: [[0.3, 0], [0, -0.3]]}
    terminal: {family: linear, matrix: 0.5, radius: 0.9}
    driver: {family: linear, y_coef: 0.5}
    run: {steps: 256, paths: 10000, n_penalty: 64, seed: 1}

Unknown keys anywhere are errors naming the key path.  Precedence is
command-line flags, then the file, then :data:`DEFAULTS`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .bsde_core import RegressionBasis, Scenario
from .exceptions import ConfigurationError
from .harness import DEFAULT_N_LIST

COMMANDS = ("validate", "solve", "sweep", "diagnose")

DEFAULTS = {
    "steps": 256,
    "paths": 10_000,
    "n_penalty": 64,
    "seed": 1,
    "replications": 3,
    "n_list": list(DEFAULT_N_LIST),
    "basis": "polynomial",
    "degree": 2,
    "bins": 32,
    "out": "rbsde-out",
}

_ANY = object()  # leaf: any value

SCENARIO_SCHEMA = {
    "name": _ANY,
    "horizon": _ANY,
    "lipschitz": _ANY,
    "tube": {
        "ball": {"center": _ANY, "radius_poly": _ANY},
        "halfspaces": [{"normal": _ANY, "offset_poly": _ANY}],
    },
    "noise": {"brownian_dim": _ANY, "marks": _ANY, "intensities": _ANY},
    "forward": {"x0": _ANY, "drift": _ANY, "drift_matrix": _ANY, "vol": _ANY, "jump_sizes": _ANY},
    "terminal": _ANY,  # family-dependent, checked below
    "driver": _ANY,
}

FAMILY_KEYS = {
    "terminal": {
        "constant": {"value"},
        "linear": {"matrix", "offset", "radius", "center"},
        "clamped-polynomial": {"coefficients", "lower", "upper"},
    },
    "driver": {
        "constant": {"value"},
        "linear": {"offset", "y_coef", "z_coef", "u_coef"},
        "singular-push": {"direction", "kappa", "exponent", "feature_coef"},
    },
}

REQUIRED = {"horizon", "tube", "terminal", "driver"}
RUN_KEYS = set(DEFAULTS)
POSITIVE = ("steps", "paths", "n_penalty", "replications", "bins")


def _check_keys(data, schema, path):
    if schema is _ANY:
        return
    if isinstance(schema, list):
        if not isinstance(data, list):
            raise ConfigurationError(f"{path}: expected a list")
        for i, item in enumerate(data):
            _check_keys(item, schema[0], f"{path}[{i}]")
        return
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping")
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in schema:
            raise ConfigurationError(f"{where}: unknown key")
        _check_keys(value, schema[key], where)


def check_scenario_dict(cfg: dict) -> None:
    """Schema check of a scenario definition; raises :class:`ConfigurationError` with the key path."""
    _check_keys(cfg, SCENARIO_SCHEMA, "")
    missing = sorted(REQUIRED - set(cfg))
    if missing:
        raise ConfigurationError(f"{missing[0]}: required key missing")
    tube = cfg["tube"]
    if len(tube) != 1:
        raise ConfigurationError("tube: give exactly one of 'ball' or 'halfspaces'")
    for section, families in FAMILY_KEYS.items():
        block = cfg[section]
        if not isinstance(block, dict) or "family" not in block:
            raise ConfigurationError(f"{section}.family: required key missing")
        family = block["family"]
        if family not in families:
            raise ConfigurationError(
                f"{section}.family: unknown family {family!r} (choose from {', '.join(sorted(families))})"
            )
        for key in block:
            if key != "family" and key not in families[family]:
                raise ConfigurationError(f"{section}.{key}: unknown key for family {family!r}")


def load_file(path) -> dict:
    """Read a YAML or JSON config file (JSON is valid YAML)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: malformed config: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


@dataclass
class RunConfig:
    """Fully resolved run settings."""

    command: str
    scenario: dict
    source: str
    steps: int = DEFAULTS["steps"]
    paths: int = DEFAULTS["paths"]
    n_penalty: int = DEFAULTS["n_penalty"]
    seed: int = DEFAULTS["seed"]
    replications: int = DEFAULTS["replications"]
    n_list: list = field(default_factory=lambda: list(DEFAULTS["n_list"]))
    basis: str = DEFAULTS["basis"]
    degree: int = DEFAULTS["degree"]
    bins: int = DEFAULTS["bins"]
    out: str = DEFAULTS["out"]

    @property
    def regression_basis(self) -> RegressionBasis:
        return RegressionBasis(self.basis, self.degree, self.bins)

    def to_dict(self):
        """Everything that determines the results (the output directory does not)."""
        return {
            "command": self.command,
            "scenario": self.scenario,
            "steps": self.steps,
            "paths": self.paths,
            "n_penalty": self.n_penalty,
            "seed": self.seed,
            "replications": self.replications,
            "n_list": list(self.n_list),
            "basis": self.regression_basis.to_dict(),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _validated_overrides(values: dict, origin: str) -> dict:
    out = {}
    for key, value in values.items():
        if value is None:
            continue
        name = f"{origin}{key.replace('_', '-')}" if origin == "--" else f"{origin}{key}"
        if key not in RUN_KEYS:
            raise ConfigurationError(f"{name}: unknown key")
        if key in POSITIVE and (not isinstance(value, int) or isinstance(value, bool) or value < 1):
            raise ConfigurationError(f"{name}: must be a positive integer, got {value!r}")
        if key in ("seed", "degree") and (not isinstance(value, int) or value < 0):
            raise ConfigurationError(f"{name}: must be a non-negative integer, got {value!r}")
        if key == "n_list":
            if (not isinstance(value, (list, tuple)) or not value
                    or any(not isinstance(n, int) or n < 1 for n in value)
                    or any(b <= a for a, b in zip(value, value[1:]))):
                raise ConfigurationError(f"{name}: must be strictly increasing positive integers")
            value = list(value)
        out[key] = value
    return out


def parse_config(command: str, scenario: Optional[str] = None, config: Optional[str] = None,
                 overrides: Optional[dict] = None, validate: bool = True):
    """Resolve a :class:`RunConfig` and build its :class:`Scenario`.

    ``scenario`` is a built-in name or a path to a config file; ``config``
    is a config file path.  ``overrides`` holds command-line values
    (``None`` entries are ignored).  With ``validate`` the tube is checked
    for non-emptiness and non-expansion on the run grid.
    """
    from .scenarios import REGISTRY, build_scenario, registered

    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    if scenario is not None and config is not None:
        raise ConfigurationError("give either a scenario name or a config file, not both")
    source = scenario if scenario is not None else config
    if source is None:
        raise ConfigurationError("no scenario: pass --scenario NAME or --config FILE")
    file_run = {}
    if source in REGISTRY:
        scen_cfg = registered(source)
    elif Path(source).is_file():
        data = load_file(source)
        file_run = data.pop("run", None) or {}
        if not isinstance(file_run, dict):
            raise ConfigurationError("run: expected a mapping")
        scen_cfg = data
        scen_cfg.setdefault("name", Path(source).stem)
    else:
        raise ConfigurationError(
            f"unknown scenario {source!r}: not a built-in ({', '.join(sorted(REGISTRY))}) or a file"
        )
    check_scenario_dict(scen_cfg)
    settings = dict(DEFAULTS)
    settings.update(_validated_overrides(file_run, "run."))
    settings.update(_validated_overrides(overrides or {}, "--"))
    run = RunConfig(command=command, scenario=scen_cfg, source=str(source), **settings)
    try:
        built: Scenario = build_scenario(scen_cfg, run.steps)
    except ConfigurationError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigurationError(f"scenario {scen_cfg.get('name', source)!r}: {exc}") from exc
    if validate:
        from .geometry import validate_tube

        validate_tube(built.tube, built.grid, strict=True)
    return run, built
