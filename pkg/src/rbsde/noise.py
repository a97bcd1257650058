"""Wiener-Poisson driving noise on a uniform grid and the forward Euler state.

The Levy measure is restricted to finitely many marks ``e_j`` with
intensities ``lambda_j``, so the compensated jump measure over a step is
``dmu_{k,j} = dp_{k,j} - lambda_j * dt`` with ``dp`` Poisson counts.

Random numbers come from one Philox stream per path, keyed by
``(seed, path index)``.  Any path can be regenerated on its own and the
bundle does not depend on how the paths are split between worker threads.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ._parallel import thread_count
from .exceptions import ConfigurationError, InputError, NumericalError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * T / N``, ``k = 0..N``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError(f"step count must be a positive integer, got {self.steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    def to_dict(self):
        return {"horizon": self.horizon, "steps": self.steps}


@dataclass(frozen=True)
class LevyNoiseSpec:
    """Brownian dimension plus a finite list of jump marks and intensities."""

    brownian_dim: int
    marks: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    intensities: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        marks = np.array(self.marks, dtype=float)
        if marks.ndim == 1:
            marks = marks.reshape(-1, 1) if marks.size else np.zeros((0, 1))
        lam = np.array(self.intensities, dtype=float).reshape(-1)
        if self.brownian_dim < 0 or int(self.brownian_dim) != self.brownian_dim:
            raise ConfigurationError("brownian_dim must be a non-negative integer")
        if marks.shape[0] != lam.size:
            raise ConfigurationError("one intensity is required per mark")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise ConfigurationError("jump intensities must be positive and finite")
        marks.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "brownian_dim", int(self.brownian_dim))
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "intensities", lam)

    @property
    def n_marks(self) -> int:
        return self.intensities.size

    def to_dict(self):
        return {
            "brownian_dim": self.brownian_dim,
            "marks": self.marks.tolist(),
            "intensities": self.intensities.tolist(),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class ForwardSpec:
    """Euler dynamics ``X_{k+1} = X_k + b dt + sigma dW + sum_j c_j dp_j``.

    ``drift(t, x)`` returns ``(M, d_X)``, ``diffusion(t, x)`` returns
    ``(M, d_X, n_W)`` and ``jump(t, x)`` returns ``(M, d_X, J)``; ``x`` is
    the ``(M, d_X)`` batch of current states.
    """

    x0: np.ndarray
    drift: Callable
    diffusion: Callable
    jump: Optional[Callable] = None
    lipschitz: float = 0.0

    @property
    def dim(self) -> int:
        return np.asarray(self.x0).size

    @classmethod
    def linear(cls, x0, drift=None, drift_matrix=None, vol=None, jump_sizes=None):
        """Affine drift ``drift + drift_matrix @ x``, constant ``vol`` and additive jumps.

        ``jump_sizes`` is ``(d_X, J)``; column ``j`` is added at every event of mark ``j``.
        """
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        d = x0.size
        b0 = np.zeros(d) if drift is None else np.asarray(drift, dtype=float).reshape(d)
        bm = np.zeros((d, d)) if drift_matrix is None else np.asarray(drift_matrix, dtype=float).reshape(d, d)
        vol = np.zeros((d, 0)) if vol is None else np.asarray(vol, dtype=float).reshape(d, -1)
        jumps = None if jump_sizes is None else np.asarray(jump_sizes, dtype=float).reshape(d, -1)

        def drift_fn(t, x):
            return b0 + x @ bm.T

        def diffusion_fn(t, x):
            return np.broadcast_to(vol, (x.shape[0],) + vol.shape)

        jump_fn = None
        if jumps is not None:
            def jump_fn(t, x):
                return np.broadcast_to(jumps, (x.shape[0],) + jumps.shape)

        lip = float(np.linalg.norm(bm, 2)) if bm.size else 0.0
        return cls(x0=x0, drift=drift_fn, diffusion=diffusion_fn, jump=jump_fn, lipschitz=lip)


@dataclass(frozen=True)
class PathBundle:
    """A batch of ``M`` simulated driving paths (and optionally forward states)."""

    grid: TimeGrid
    spec: LevyNoiseSpec
    seed: int
    dW: np.ndarray  # (M, N, n_W)
    dP: np.ndarray  # (M, N, J) event counts
    X: Optional[np.ndarray] = None  # (M, N+1, d_X)

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def d_mu(self) -> np.ndarray:
        """Compensated jump increments ``dp - lambda * dt``."""
        return self.dP - self.spec.intensities * self.grid.dt

    def d_mu_step(self, k: int) -> np.ndarray:
        """Compensated jump increments of step ``k`` alone, shape ``(M, J)``."""
        return self.dP[:, k] - self.spec.intensities * self.grid.dt


def _path_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(index)]))


def sample_path(grid: TimeGrid, spec: LevyNoiseSpec, seed: int, index: int):
    """Brownian and Poisson increments of path ``index`` alone: ``(dW, dP)``."""
    rng = _path_stream(seed, index)
    dw = rng.standard_normal((grid.steps, spec.brownian_dim)) * np.sqrt(grid.dt)
    dp = rng.poisson(spec.intensities * grid.dt, size=(grid.steps, spec.n_marks))
    return dw, dp


def sample_paths(grid: TimeGrid, spec: LevyNoiseSpec, n_paths: int, seed: int) -> PathBundle:
    """Deterministic batch of ``n_paths`` driving paths for ``seed``."""
    if int(n_paths) != n_paths or n_paths < 1:
        raise InputError(f"path count must be a positive integer, got {n_paths}")
    n_paths = int(n_paths)
    dW = np.empty((n_paths, grid.steps, spec.brownian_dim))
    dP = np.empty((n_paths, grid.steps, spec.n_marks), dtype=np.int64)

    def fill(lo, hi):
        for i in range(lo, hi):
            dW[i], dP[i] = sample_path(grid, spec, seed, i)

    workers = thread_count()
    bounds = np.linspace(0, n_paths, workers + 1).astype(int)
    if workers == 1:
        fill(0, n_paths)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fill, bounds[:-1], bounds[1:]))
    return PathBundle(grid=grid, spec=spec, seed=int(seed), dW=dW, dP=dP)


def forward_euler(dynamics: ForwardSpec, bundle: PathBundle) -> PathBundle:
    """Fill the forward states ``X`` of ``bundle`` by the Euler scheme."""
    grid, M = bundle.grid, bundle.n_paths
    x0 = np.asarray(dynamics.x0, dtype=float).reshape(-1)
    X = np.empty((M, grid.steps + 1, x0.size))
    X[:, 0] = x0
    times = grid.times
    for k in range(grid.steps):
        x, t = X[:, k], times[k]
        step = dynamics.drift(t, x) * grid.dt
        if bundle.spec.brownian_dim:
            step = step + np.einsum("mij,mj->mi", dynamics.diffusion(t, x), bundle.dW[:, k])
        if bundle.spec.n_marks and dynamics.jump is not None:
            step = step + np.einsum("mij,mj->mi", dynamics.jump(t, x), bundle.dP[:, k])
        X[:, k + 1] = x + step
        bad = ~np.all(np.isfinite(X[:, k + 1]), axis=1)
        if np.any(bad):
            path = int(np.argmax(bad))
            raise NumericalError(f"non-finite forward state on path {path} at step {k + 1}",
                                 step=k + 1, path=path)
    return replace(bundle, X=X)


# binary cache ---------------------------------------------------------------

BUNDLE_MAGIC = b"RBSDEPB"
BUNDLE_VERSION = 1


def save_bundle(path, bundle: PathBundle) -> None:
    """Write ``bundle`` to ``path`` with a versioned JSON header."""
    header = {
        "grid": bundle.grid.to_dict(),
        "spec": bundle.spec.to_dict(),
        "spec_hash": bundle.spec.digest(),
        "paths": bundle.n_paths,
        "seed": bundle.seed,
        "has_states": bundle.X is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC + bytes([BUNDLE_VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        arrays = [bundle.dW, bundle.dP] + ([bundle.X] if bundle.X is not None else [])
        for arr in arrays:
            np.save(fh, arr, allow_pickle=False)


def load_bundle(path) -> PathBundle:
    """Read a bundle written by :func:`save_bundle`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(BUNDLE_MAGIC) + 1)
        if magic[:-1] != BUNDLE_MAGIC:
            raise InputError(f"{path}: not a path-bundle file")
        if magic[-1] != BUNDLE_VERSION:
            raise InputError(f"{path}: unsupported bundle version {magic[-1]}")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        data = io.BytesIO(fh.read())
    spec = LevyNoiseSpec(**header["spec"])
    if spec.digest() != header["spec_hash"]:
        raise InputError(f"{path}: noise spec hash mismatch")
    dW = np.load(data, allow_pickle=False)
    dP = np.load(data, allow_pickle=False)
    X = np.load(data, allow_pickle=False) if header["has_states"] else None
    return PathBundle(grid=TimeGrid(**header["grid"]), spec=spec, seed=header["seed"], dW=dW, dP=dP, X=X)
