"""Regression-based backward Euler solver for BSDEs driven by Wiener-Poisson noise.

One backward step from ``Y_{k+1}`` to ``Y_k`` on every path::

    C_k = E[Y_{k+1} | X_k]                               (continuation)
    Z_k = E[(Y_{k+1} - C_k) dW_k^T | X_k] / dt
    U_kj = E[(Y_{k+1} - C_k) dmu_kj | X_k] / (lambda_j dt)
    Y_k = C_k + f(t_k, X_k, C_k, Z_k, U_k) dt

Conditional expectations are least-squares regressions on ``X_k``.  The
martingale-increment regressions use ``Y_{k+1} - C_k`` rather than
``Y_{k+1}``; both have the same conditional mean because the increments are
centred, and the centred form returns exactly zero for a deterministic
``Y_{k+1}``.

When a penalty level ``n`` is given, each ``Y_k`` is passed through the
penalty resolvent (see :mod:`rbsde.penalty`) and the reflection increments
are recorded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigurationError, InputError, NumericalError
from .geometry import CLOSURE_TOL, ConvexTube
from .noise import ForwardSpec, LevyNoiseSpec, PathBundle, TimeGrid, forward_euler
from .regression import Projector, make_basis

LIPSCHITZ_SLACK = 1.1


@dataclass(frozen=True)
class RegressionBasis:
    """Which basis the conditional expectations use."""

    family: str = "polynomial"
    degree: int = 2
    bins: int = 32

    def make(self):
        return make_basis(self.family, self.degree, self.bins)

    def to_dict(self):
        return {"family": self.family, "degree": self.degree, "bins": self.bins}


@dataclass(frozen=True)
class Scenario:
    """Data of a (reflected) BSDE problem.

    ``terminal(x)`` maps ``(M, d_X)`` forward states to ``(M, d)`` values.
    ``driver(t, x, y, z, u)`` takes ``y (M, d)``, ``z (M, d, n_W)``,
    ``u (M, d, J)`` and returns ``(M, d)``.
    """

    name: str
    tube: ConvexTube
    grid: TimeGrid
    noise: LevyNoiseSpec
    forward: ForwardSpec
    terminal: Callable
    driver: Callable
    lipschitz: float
    dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.tube.horizon - self.grid.horizon) > 1e-12 * self.grid.horizon:
            raise ConfigurationError("tube and grid horizons differ")
        if self.tube.dim != self.dim:
            raise ConfigurationError(f"tube dimension {self.tube.dim} != solution dimension {self.dim}")
        if self.lipschitz < 0:
            raise ConfigurationError("Lipschitz constant must be non-negative")

    def u_norm(self, u):
        """``(sum_j lambda_j |u_j|^2)^{1/2}`` for ``u`` of shape ``(..., d, J)``."""
        lam = self.noise.intensities
        return np.sqrt(np.sum(np.sum(u * u, axis=-2) * lam, axis=-1))

    def check_terminal(self, bundle: PathBundle, tol=CLOSURE_TOL):
        """Terminal values on ``bundle``; raise if any lies outside the closed terminal slice."""
        xi = np.asarray(self.terminal(bundle.X[:, -1]), dtype=float).reshape(bundle.n_paths, self.dim)
        inside = self.tube.contains_closure(self.grid.horizon, xi, tol=tol)
        if not np.all(inside):
            i = int(np.argmin(inside))
            raise ConfigurationError(
                f"terminal value {xi[i].tolist()} on path {i} lies outside the closed terminal slice"
            )
        return xi

    def check_lipschitz(self, samples=1000, seed=0, x=None):
        """Random finite-difference probes of the declared Lipschitz constant.

        Returns the largest observed ratio ``|df| / (|dy| + |dz| + |du|)``;
        raises when it exceeds ``1.1 * lipschitz``.
        """
        rng = np.random.default_rng(seed)
        d, nw, J = self.dim, self.noise.brownian_dim, self.noise.n_marks
        if x is None:
            x = np.tile(np.asarray(self.forward.x0, dtype=float), (samples, 1))
            x = x + rng.standard_normal(x.shape)
        else:
            x = np.asarray(x)[rng.integers(0, len(x), samples)]
        t = rng.uniform(0.0, self.grid.horizon, samples)
        t = np.minimum(t, self.grid.horizon - self.grid.dt)
        scale = 2.0 * rng.uniform(0.0, 1.0, (samples, 1))
        y1, y2 = scale * rng.standard_normal((2, samples, d))
        z1, z2 = scale[..., None] * rng.standard_normal((2, samples, d, nw))
        u1, u2 = scale[..., None] * rng.standard_normal((2, samples, d, J))
        worst = 0.0
        for i in range(samples):
            sl = slice(i, i + 1)
            f1 = self.driver(t[i], x[sl], y1[sl], z1[sl], u1[sl])
            f2 = self.driver(t[i], x[sl], y2[sl], z2[sl], u2[sl])
            gap = (np.linalg.norm(y1[i] - y2[i]) + np.linalg.norm(z1[i] - z2[i])
                   + float(self.u_norm(u1[sl] - u2[sl])[0]))
            if gap > 0:
                worst = max(worst, float(np.linalg.norm(f1 - f2)) / gap)
        if worst > LIPSCHITZ_SLACK * self.lipschitz + 1e-12:
            raise ConfigurationError(
                f"driver Lipschitz ratio {worst:.4g} exceeds declared constant {self.lipschitz:.4g}"
            )
        return worst

    def validate(self, bundle: Optional[PathBundle] = None, samples=1000):
        """Full scenario check; returns a dict of findings."""
        from .geometry import validate_tube

        report = validate_tube(self.tube, self.grid, strict=True)
        ratio = self.check_lipschitz(samples=samples)
        out = {"tube": report.to_dict(), "lipschitz_ratio": ratio, "lipschitz": self.lipschitz}
        if bundle is not None:
            bundle = ensure_states(self, bundle)
            self.check_terminal(bundle)
            out["terminal_in_domain"] = True
        return out


@dataclass
class BackwardSolution:
    """Per-path, per-step ``(Y, Z, U, Lambda)`` with diagnostics.

    ``Y`` is ``(M, N+1, d)``; ``Z`` is ``(M, N, d, n_W)``; ``U`` is
    ``(M, N, d, J)``; ``dLambda`` holds the reflection increment of step
    ``k`` (``(M, N, d)``), and ``Lambda[:, k]`` sums the increments of the
    steps before ``k`` so ``Lambda[:, 0] == 0``.
    """

    grid: TimeGrid
    Y: np.ndarray
    Z: Optional[np.ndarray]
    U: Optional[np.ndarray]
    dLambda: np.ndarray
    penalty: Optional[int] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def Lambda(self) -> np.ndarray:
        M, N, d = self.dLambda.shape
        out = np.zeros((M, N + 1, d))
        np.cumsum(self.dLambda, axis=1, out=out[:, 1:])
        return out

    @property
    def Y0(self) -> np.ndarray:
        return self.Y[:, 0]


def ensure_states(scenario: Scenario, bundle: PathBundle) -> PathBundle:
    if bundle.X is None:
        return forward_euler(scenario.forward, bundle)
    return bundle


def backward_step(k, y_next, bundle: PathBundle, scenario: Scenario, basis: RegressionBasis, projector=None):
    """One explicit step from ``Y_{k+1}`` to ``(Y_k, Z_k, U_k)``.

    ``y_next`` is ``(M, d)`` or a stack ``(L, M, d)`` of independent
    targets sharing the same regression design.  Returns
    ``(y, z, u, info)``; ``info`` carries the regression residual and the
    design condition number.
    """
    grid = bundle.grid
    if not 0 <= k < grid.steps:
        raise InputError(f"step index {k} outside 0..{grid.steps - 1}")
    stacked = y_next.ndim == 3
    ys = y_next if stacked else y_next[None]
    L, M, d = ys.shape
    dt = grid.dt
    proj = projector if projector is not None else Projector(basis.make(), bundle.X[:, k])
    # regression targets are laid out path-major: (M, L * d * ...)
    cont = proj.fitted(ys.transpose(1, 0, 2)).transpose(1, 0, 2)
    resid = ys - cont
    nw, J = bundle.spec.brownian_dim, bundle.spec.n_marks
    if nw:
        target = resid[..., None] * bundle.dW[None, :, k, None, :]
        z = proj.fitted(target.transpose(1, 0, 2, 3)).transpose(1, 0, 2, 3) / dt
    else:
        z = np.zeros((L, M, d, 0))
    if J:
        lam = bundle.spec.intensities
        target = resid[..., None] * bundle.d_mu_step(k)[None, :, None, :]
        u = proj.fitted(target.transpose(1, 0, 2, 3)).transpose(1, 0, 2, 3) / (lam * dt)
    else:
        u = np.zeros((L, M, d, 0))
    t = grid.times[k]
    x = bundle.X[:, k]
    y = np.empty_like(cont)
    for level in range(L):
        drift = np.asarray(scenario.driver(t, x, cont[level], z[level], u[level]), dtype=float)
        y[level] = cont[level] + drift.reshape(M, d) * dt
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z)) and np.all(np.isfinite(u))):
        raise NumericalError(f"non-finite solution values at step {k}", step=k)
    scale = np.linalg.norm(ys)
    info = {
        "residual": float(np.linalg.norm(resid) / scale) if scale > 0 else 0.0,
        "condition": proj.condition,
    }
    if not stacked:
        y, z, u = y[0], z[0], u[0]
    return y, z, u, info


def backward_sweep(scenario: Scenario, bundle: PathBundle, basis: RegressionBasis,
                   penalties: Sequence[Optional[int]]):
    """Run several penalty levels backward on one bundle, one step at a time.

    Yields ``(k, Y_k, Z_k, U_k, dLambda_k, info)`` for ``k = N, N-1, ..., 0``
    with a leading level axis on every array.  At ``k = N`` only ``Y_N`` is
    meaningful.  The regression design of each step is factorized once and
    shared by all levels; ``None`` in ``penalties`` means no penalty.
    """
    from .penalty import penalized_step

    if bundle.grid != scenario.grid:
        raise InputError("bundle grid does not match the scenario grid")
    for n in penalties:
        if n is not None and (int(n) != n or n < 1):
            raise InputError(f"penalty level must be a positive integer, got {n}")
    bundle = ensure_states(scenario, bundle)
    grid = bundle.grid
    M, N, d = bundle.n_paths, grid.steps, scenario.dim
    L = len(penalties)
    if any(n is not None for n in penalties):
        xi = scenario.check_terminal(bundle)
    else:
        xi = np.asarray(scenario.terminal(bundle.X[:, -1]), dtype=float).reshape(M, d)
    y = np.repeat(xi[None], L, axis=0)
    zero = np.zeros((L, M, d))
    yield N, y, None, None, zero, None
    times = grid.times
    for k in range(N - 1, -1, -1):
        y, z, u, info = backward_step(k, y, bundle, scenario, basis)
        d_lambda = np.zeros((L, M, d))
        for level, n in enumerate(penalties):
            if n is not None:
                y[level], d_lambda[level] = penalized_step(y[level], times[k], n, grid.dt, scenario.tube)
        yield k, y, z, u, d_lambda, info


def backward_solve(scenario: Scenario, bundle: PathBundle, basis: RegressionBasis = RegressionBasis(),
                   penalty: Optional[int] = None, keep_zu: bool = True) -> BackwardSolution:
    """Solve backward from ``g(X_N)``; with ``penalty`` apply the resolvent at every step."""
    bundle = ensure_states(scenario, bundle)
    M, N, d = bundle.n_paths, bundle.grid.steps, scenario.dim
    Y = np.empty((M, N + 1, d))
    dLambda = np.zeros((M, N, d))
    Z = np.empty((M, N, d, bundle.spec.brownian_dim)) if keep_zu else None
    U = np.empty((M, N, d, bundle.spec.n_marks)) if keep_zu else None
    residuals = np.zeros(N)
    conditions = np.zeros(N)
    for k, y, z, u, d_lambda, info in backward_sweep(scenario, bundle, basis, [penalty]):
        Y[:, k] = y[0]
        if k == N:
            continue
        dLambda[:, k] = d_lambda[0]
        if keep_zu:
            Z[:, k], U[:, k] = z[0], u[0]
        residuals[k], conditions[k] = info["residual"], info["condition"]
    return BackwardSolution(
        grid=bundle.grid, Y=Y, Z=Z, U=U, dLambda=dLambda, penalty=penalty,
        diagnostics={"regression_residual": residuals, "condition": conditions},
    )


def backward_solve_unconstrained(scenario, bundle, basis=RegressionBasis(), keep_zu=True):
    """Plain BSDE solution (``Lambda == 0``)."""
    return backward_solve(scenario, bundle, basis, penalty=None, keep_zu=keep_zu)


class BSDESolver(BaseEstimator):
    """Estimator-style wrapper: ``fit(bundle)`` stores ``solution_``.

    ``n_penalty=None`` gives the unconstrained solver.  Parameters follow the
    scikit-learn conventions so sweeps can ``clone(...).set_params(...)``.
    """

    def __init__(self, scenario=None, n_penalty=None, basis="polynomial", degree=2, bins=32, keep_zu=True):
        self.scenario = scenario
        self.n_penalty = n_penalty
        self.basis = basis
        self.degree = degree
        self.bins = bins
        self.keep_zu = keep_zu

    def fit(self, bundle, y=None):
        if self.scenario is None:
            raise InputError("BSDESolver needs a scenario")
        basis = RegressionBasis(self.basis, self.degree, self.bins)
        self.solution_ = backward_solve(self.scenario, bundle, basis, self.n_penalty, self.keep_zu)
        self.y0_ = self.solution_.Y0.mean(axis=0)
        return self
