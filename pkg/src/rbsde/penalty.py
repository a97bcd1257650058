"""Penalized BSDEs, the reconstructed reflection process and Skorokhod diagnostics.

The penalized driver is ``f(t, y, z, u) - n (y - pi(t, y))``.  The penalty
term is treated implicitly: after the explicit driver step produces
``y_hat``, the step solves ``y + n dt (y - pi(t, y)) = y_hat``.  Every point
of the segment ``[pi(t, y_hat), y_hat]`` projects to ``pi(t, y_hat)``, which
gives the closed form

    y = pi(t, y_hat) + (y_hat - pi(t, y_hat)) / (1 + n dt)
    dLambda = -n dt (y - pi(t, y))

The resolvent is stable for every ``n dt``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .bsde_core import BackwardSolution, RegressionBasis, Scenario, backward_solve
from .exceptions import InputError
from .geometry import ConvexTube, interior_anchor

BAND_FLOOR = 1e-6


def penalized_step(y_hat, t, n, dt, tube: ConvexTube):
    """Resolvent of the penalty term; returns ``(y, dLambda)`` with the shape of ``y_hat``."""
    if n < 1:
        raise InputError(f"penalty level must be >= 1, got {n}")
    y_hat = np.asarray(y_hat, dtype=float)
    pi = tube.project(t, y_hat)
    shrink = 1.0 / (1.0 + n * dt)
    gap = y_hat - pi
    y = pi + gap * shrink
    d_lambda = -(n * dt * shrink) * gap
    return y, d_lambda


def resolvent_residual(y, y_hat, t, n, dt, tube: ConvexTube):
    """``|y + n dt (y - pi(t, y)) - y_hat|`` per point."""
    y = np.atleast_2d(y)
    res = y + n * dt * (y - tube.project(t, y)) - np.atleast_2d(y_hat)
    return np.linalg.norm(res, axis=1)


def backward_solve_penalized(scenario: Scenario, bundle, basis: RegressionBasis = RegressionBasis(),
                             n: int = 1, keep_zu: bool = True) -> BackwardSolution:
    """Penalized solution ``(Y^n, Z^n, U^n, Lambda^n)`` on ``bundle``."""
    return backward_solve(scenario, bundle, basis, penalty=n, keep_zu=keep_zu)


def _distances(sol: BackwardSolution, tube: ConvexTube):
    times = sol.grid.times
    return np.column_stack([tube.distance(t, sol.Y[:, k]) for k, t in enumerate(times)])


def path_metrics(sol: BackwardSolution, tube: ConvexTube) -> dict:
    """Per-path values whose means are the penalty metrics."""
    dist = _distances(sol, tube)
    dt = sol.grid.dt
    return {
        "sup_dist_sq": np.max(dist, axis=1) ** 2,
        "int_dist_sq": np.sum(dist[:, :-1] ** 2, axis=1) * dt,
        "tv_lambda": np.sum(np.linalg.norm(sol.dLambda, axis=2), axis=1),
        "sup_Y_sq": np.max(np.sum(sol.Y ** 2, axis=2), axis=1),
    }


METRICS = ("sup_dist_sq", "int_dist_sq", "tv_lambda", "sup_Y_sq")


def penalty_metrics(sol: BackwardSolution, tube: ConvexTube) -> dict:
    """Monte Carlo estimates ``{metric: (mean, standard error)}``."""
    out = {}
    for name, values in path_metrics(sol, tube).items():
        se = values.std(ddof=1) / np.sqrt(values.size) if values.size > 1 else 0.0
        out[name] = (float(values.mean()), float(se))
    return out


@dataclass
class SkorokhodReport:
    interior_mass_fraction: float
    alignment_min: float
    tv_total: float
    variational_gap: float
    variational_gap_se: float
    band: float
    active_steps: int

    def to_dict(self):
        return asdict(self)


def default_test_processes(sol: BackwardSolution, tube: ConvexTube, scale=0.1, seed=0):
    """The constant anchor ``P_T`` and a projected perturbation of ``Y``; both lie in the closed tube."""
    anchor = interior_anchor(tube, validate_samples=0)
    M, N1, d = sol.Y.shape
    const = np.broadcast_to(anchor.point, (M, N1, d))
    rng = np.random.default_rng(seed)
    noise = scale * rng.standard_normal((M, N1, d))
    projected = np.empty_like(sol.Y)
    for k, t in enumerate(sol.grid.times):
        projected[:, k] = tube.project(t, sol.Y[:, k] + noise[:, k])
    return [const, projected]


def skorokhod_diagnostics(sol: BackwardSolution, tube: ConvexTube, band: Optional[float] = None,
                          test_processes: Optional[Sequence[np.ndarray]] = None) -> SkorokhodReport:
    """Discrete checks of the reflection conditions.

    ``band`` defaults to ``max(2 * sup distance, 1e-6)``.  Test processes
    are ``(M, N+1, d)`` arrays with values in the closed tube.
    """
    if sol.Y.size == 0 or sol.n_paths == 0:
        raise InputError("empty solution")
    times = sol.grid.times
    N = sol.grid.steps
    dist = _distances(sol, tube)
    if band is None:
        band = max(2.0 * float(dist.max()), BAND_FLOOR)
    if band <= 0:
        raise InputError("band must be positive")
    mass = np.linalg.norm(sol.dLambda, axis=2)  # (M, N)
    total = float(mass.sum())
    interior_mass = 0.0
    cosines = []
    for k in range(N):
        active = mass[:, k] > 0
        if not np.any(active):
            continue
        yk = sol.Y[active, k]
        depth = tube.boundary_distance(times[k], yk)
        inside = tube.contains_closure(times[k], yk)
        interior_mass += float(mass[active, k][(depth > band) | inside].sum())
        direction = sol.dLambda[active, k] / mass[active, k][:, None]
        cos = np.full(yk.shape[0], -1.0)
        out = ~inside
        if np.any(out):
            cos[out] = np.einsum("ij,ij->i", direction[out], tube.inward_unit_from_outside(times[k], yk[out]))
        cosines.append(cos)
    alignment = float(np.min(np.concatenate(cosines))) if cosines else 1.0
    if test_processes is None:
        test_processes = default_test_processes(sol, tube)
    gap, gap_se = -np.inf, 0.0
    for z in test_processes:
        per_path = np.einsum("mkd,mkd->m", sol.Y[:, :N] - z[:, :N], sol.dLambda)
        mean = float(per_path.mean())
        if mean > gap:
            gap = mean
            gap_se = float(per_path.std(ddof=1) / np.sqrt(per_path.size)) if per_path.size > 1 else 0.0
    if not test_processes:
        gap = 0.0
    return SkorokhodReport(
        interior_mass_fraction=interior_mass / total if total > 0 else 0.0,
        alignment_min=min(1.0, max(-1.0, alignment)),
        tv_total=float(mass.sum(axis=1).mean()),
        variational_gap=gap,
        variational_gap_se=gap_se,
        band=float(band),
        active_steps=int(np.count_nonzero(mass)),
    )
