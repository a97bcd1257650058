"""Closed-form driver and terminal families plus the built-in scenario registry.

Scenarios are described by plain dictionaries (the same schema as scenario
config files, see :mod:`rbsde.config`), so built-ins and user files go
through one construction path.
"""
from __future__ import annotations

import copy

import numpy as np

from .bsde_core import Scenario
from .exceptions import ConfigurationError
from .geometry import BallTube, HalfspaceTube
from .noise import ForwardSpec, LevyNoiseSpec, TimeGrid


# drivers -------------------------------------------------------------------

def constant_driver(value):
    value = np.asarray(value, dtype=float).reshape(-1)

    def driver(t, x, y, z, u):
        return np.broadcast_to(value, y.shape)

    return driver, 0.0


def linear_driver(dim, intensities, brownian_dim, offset=None, y_coef=0.0, z_coef=0.0, u_coef=0.0):
    """``offset + y_coef y + z_coef sum_i z[:, i] + u_coef sum_j lambda_j u_j``."""
    offset = np.zeros(dim) if offset is None else np.asarray(offset, dtype=float).reshape(dim)
    lam = np.asarray(intensities, dtype=float)

    def driver(t, x, y, z, u):
        out = offset + y_coef * y
        if z_coef:
            out = out + z_coef * z.sum(axis=-1)
        if u_coef and lam.size:
            out = out + u_coef * (u @ lam)
        return out

    lipschitz = abs(y_coef) + abs(z_coef) * np.sqrt(brownian_dim) + abs(u_coef) * np.sqrt(lam.sum())
    return driver, float(lipschitz)


def singular_push_driver(horizon, direction, kappa, exponent, feature_coef=0.0):
    """``kappa (T - t)^(-exponent) (1 + feature_coef x_0) direction``.

    Independent of ``(y, z, u)``; square integrable in time for ``exponent < 1/2``.
    """
    if not 0 <= exponent < 0.5:
        raise ConfigurationError("singular-push exponent must lie in [0, 0.5)")
    direction = np.asarray(direction, dtype=float).reshape(-1)

    def driver(t, x, y, z, u):
        tau = max(horizon - float(t), 1e-300)
        weight = kappa * tau ** (-exponent) * (1.0 + feature_coef * x[:, 0])
        return weight[:, None] * direction

    return driver, 0.0


# terminals -----------------------------------------------------------------

def constant_terminal(value):
    value = np.asarray(value, dtype=float).reshape(-1)

    def terminal(x):
        return np.tile(value, (x.shape[0], 1))

    return terminal


def linear_terminal(dim, matrix, offset=None, radius=None, center=None):
    """``offset + matrix x``, pulled radially into ``|g - center| <= radius`` when given."""
    offset = np.zeros(dim) if offset is None else np.asarray(offset, dtype=float).reshape(dim)
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(dim)
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 0:
        matrix = matrix * np.eye(dim)

    def terminal(x):
        g = offset + x @ matrix.T
        if radius is not None:
            rel = g - center
            norm = np.linalg.norm(rel, axis=1, keepdims=True)
            g = center + rel * np.minimum(1.0, radius / np.maximum(norm, 1e-300))
        return g

    return terminal


def clamped_polynomial_terminal(coefficients, lower, upper):
    """Component-wise ``clip(sum_p c_p x_i^p, lower, upper)``."""
    poly = np.polynomial.Polynomial(np.asarray(coefficients, dtype=float))

    def terminal(x):
        return np.clip(poly(x), lower, upper)

    return terminal


# builders --------------------------------------------------------------------

def build_tube(cfg, horizon):
    if "ball" in cfg:
        ball = cfg["ball"]
        return BallTube(ball["center"], ball["radius_poly"], horizon)
    faces = cfg["halfspaces"]
    return HalfspaceTube([f["normal"] for f in faces], [f["offset_poly"] for f in faces], horizon)


def build_scenario(cfg: dict, steps: int) -> Scenario:
    """Turn a validated scenario dictionary into a :class:`Scenario`."""
    horizon = float(cfg["horizon"])
    grid = TimeGrid(horizon, steps)
    tube = build_tube(cfg["tube"], horizon)
    d = tube.dim
    ncfg = cfg.get("noise", {})
    noise = LevyNoiseSpec(
        ncfg.get("brownian_dim", 1),
        ncfg.get("marks", np.zeros((0, 1))),
        ncfg.get("intensities", []),
    )
    fcfg = cfg.get("forward", {})
    x0 = fcfg.get("x0", [0.0])
    forward = ForwardSpec.linear(
        x0,
        drift=fcfg.get("drift"),
        drift_matrix=fcfg.get("drift_matrix"),
        vol=fcfg.get("vol", np.zeros((len(x0), noise.brownian_dim))),
        jump_sizes=fcfg.get("jump_sizes"),
    )
    tcfg = dict(cfg["terminal"])
    family = tcfg.pop("family")
    if family == "constant":
        terminal = constant_terminal(tcfg["value"])
    elif family == "linear":
        terminal = linear_terminal(d, **tcfg)
    elif family == "clamped-polynomial":
        terminal = clamped_polynomial_terminal(**tcfg)
    else:
        raise ConfigurationError(f"terminal.family: unknown family {family!r}")
    dcfg = dict(cfg["driver"])
    family = dcfg.pop("family")
    if family == "constant":
        driver, lip = constant_driver(dcfg["value"])
    elif family == "linear":
        driver, lip = linear_driver(d, noise.intensities, noise.brownian_dim, **dcfg)
    elif family == "singular-push":
        driver, lip = singular_push_driver(horizon, **dcfg)
    else:
        raise ConfigurationError(f"driver.family: unknown family {family!r}")
    lip = float(cfg.get("lipschitz", lip))
    return Scenario(
        name=cfg.get("name", "custom"), tube=tube, grid=grid, noise=noise, forward=forward,
        terminal=terminal, driver=driver, lipschitz=lip, dim=d, params=copy.deepcopy(cfg),
    )


def _interval(lower_poly, upper_poly):
    return {"halfspaces": [
        {"normal": [1.0], "offset_poly": list(upper_poly)},
        {"normal": [-1.0], "offset_poly": [-c for c in lower_poly]},
    ]}


REGISTRY = {
    "constant": {
        "name": "constant",
        "horizon": 1.0,
        "tube": {"ball": {"center": [0.0, 0.0], "radius_poly": [2.0, -0.5]}},
        "noise": {"brownian_dim": 1, "marks": [[0.2], [-0.1]], "intensities": [1.0, 0.5]},
        "forward": {"x0": [0.0], "vol": [[0.5]], "jump_sizes": [[0.2, -0.1]]},
        "terminal": {"family": "constant", "value": [0.5, -0.25]},
        "driver": {"family": "constant", "value": [0.0, 0.0]},
    },
    "martingale": {
        "name": "martingale",
        "horizon": 1.0,
        "tube": _interval([-1.5, 0.5], [1.5, -0.5]),
        "noise": {"brownian_dim": 1, "marks": [[0.1]], "intensities": [1.0]},
        "forward": {"x0": [0.0], "vol": [[0.3]], "jump_sizes": [[0.1]]},
        "terminal": {"family": "clamped-polynomial", "coefficients": [0.0, 0.5], "lower": -0.8, "upper": 0.8},
        "driver": {"family": "constant", "value": [0.0]},
    },
    "binding-1d": {
        "name": "binding-1d",
        "horizon": 1.0,
        "tube": _interval([-1.0], [1.0]),
        "noise": {"brownian_dim": 1},
        "forward": {"x0": [0.0], "vol": [[1.0]]},
        "terminal": {"family": "constant", "value": [1.0]},
        "driver": {"family": "singular-push", "direction": [1.0], "kappa": 0.15,
                   "exponent": 0.45, "feature_coef": 0.25},
    },
    "shrinking-ball-jumps": {
        "name": "shrinking-ball-jumps",
        "horizon": 2.0,
        "tube": {"ball": {"center": [0.0, 0.0], "radius_poly": [2.0, -0.5]}},
        "noise": {"brownian_dim": 2, "marks": [[0.3, 0.0], [0.0, -0.3]], "intensities": [1.0, 2.0]},
        "forward": {"x0": [0.0, 0.0], "vol": [[0.3, 0.0], [0.0, 0.3]],
                    "jump_sizes": [[0.3, 0.0], [0.0, -0.3]]},
        "terminal": {"family": "linear", "matrix": 0.3, "offset": [0.6, 0.0], "radius": 0.95},
        "driver": {"family": "linear", "offset": [0.8, 0.0], "y_coef": 0.1, "u_coef": -0.1},
    },
    "drift-1d": {
        "name": "drift-1d",
        "horizon": 1.0,
        "tube": _interval([-1.0], [1.0]),
        "noise": {"brownian_dim": 1},
        "forward": {"x0": [0.0], "vol": [[1.0]]},
        "terminal": {"family": "constant", "value": [0.0]},
        "driver": {"family": "constant", "value": [2.0]},
    },
    "linear-decay": {
        "name": "linear-decay",
        "horizon": 1.0,
        "tube": _interval([-2.0], [2.0]),
        "noise": {"brownian_dim": 1},
        "forward": {"x0": [0.0], "vol": [[1.0]]},
        "terminal": {"family": "constant", "value": [1.0]},
        "driver": {"family": "linear", "y_coef": -1.0},
    },
    "constant-drift": {
        "name": "constant-drift",
        "horizon": 1.0,
        "tube": _interval([-2.0], [2.0]),
        "noise": {"brownian_dim": 1},
        "forward": {"x0": [0.0], "vol": [[1.0]]},
        "terminal": {"family": "constant", "value": [0.25]},
        "driver": {"family": "constant", "value": [0.5]},
    },
    "expanding-ball": {
        "name": "expanding-ball",
        "horizon": 1.0,
        "tube": {"ball": {"center": [0.0, 0.0], "radius_poly": [1.0, 1.0]}},
        "noise": {"brownian_dim": 1},
        "forward": {"x0": [0.0], "vol": [[1.0]]},
        "terminal": {"family": "constant", "value": [0.0, 0.0]},
        "driver": {"family": "constant", "value": [0.0, 0.0]},
    },
}


def registered(name: str) -> dict:
    try:
        return copy.deepcopy(REGISTRY[name])
    except KeyError:
        raise ConfigurationError(
            f"unknown scenario {name!r}; built-ins: {', '.join(sorted(REGISTRY))}"
        ) from None


def scenario(name: str, steps: int = 256) -> Scenario:
    """Built-in scenario ``name`` on a grid of ``steps`` steps."""
    return build_scenario(registered(name), steps)
