"""Time-dependent convex domains ("tubes") and their projection geometry.

A tube is a family of open, bounded, convex slices ``D_t`` for ``t`` in
``[0, T]`` that never expands as time increases.  Two concrete families are
provided:

* :class:`BallTube` -- a ball with a fixed center and non-increasing radius;
* :class:`HalfspaceTube` -- an intersection of half-spaces
  ``<a_i, y> < b_i(t)`` with unit normals and non-increasing offsets.

Every query takes a single time ``t`` and either one point of shape ``(d,)``
or a batch of shape ``(M, d)``; the result has the matching shape.  Tubes
are immutable, so queries are safe to share between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import linprog

from .exceptions import ConfigurationError, DomainError, InputError, NumericalError

TimeFunction = Callable[[float], float]

CLOSURE_TOL = 1e-12
DYKSTRA_MAX_ITER = 10_000
DYKSTRA_TOL = 1e-10
MIN_INRADIUS = 1e-9


def as_time_function(spec) -> TimeFunction:
    """Return a callable ``t -> float``.

    ``spec`` is either a callable or a sequence of polynomial coefficients in
    ascending order (``[c0, c1, c2]`` means ``c0 + c1 t + c2 t**2``).
    """
    if callable(spec):
        return spec
    coefs = np.atleast_1d(np.asarray(spec, dtype=float))
    if coefs.ndim != 1 or coefs.size == 0 or not np.all(np.isfinite(coefs)):
        raise ConfigurationError(f"invalid polynomial coefficients: {spec!r}")
    return Polynomial(coefs)


def _as_points(y, dim):
    pts = np.asarray(y, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise InputError(f"expected points of dimension {dim}, got shape {np.shape(y)}")
    return pts, single


def _unwrap(values, single):
    return values[0] if single else values


@dataclass(frozen=True)
class NormalConeSample:
    """Unit generators of the inward normal cone at a boundary point."""

    base: np.ndarray
    generators: np.ndarray  # (K, d), unit rows


@dataclass(frozen=True)
class InteriorAnchor:
    """A deep point of ``D_T`` with its margin and the constant ``gamma``.

    For every ``y`` and ``t``: ``<y - point, y - pi(t, y)> >= |y - pi(t, y)| / gamma``.
    """

    point: np.ndarray
    margin: float
    gamma: float

    def slack(self, tube: "ConvexTube", t: float, y) -> np.ndarray:
        """``<y - P, y - pi(t,y)> - |y - pi(t,y)| / gamma``; non-negative when the bound holds."""
        pts, single = _as_points(y, tube.dim)
        gap = pts - tube.project(t, pts)
        lhs = np.einsum("ij,ij->i", pts - self.point, gap)
        return _unwrap(lhs - np.linalg.norm(gap, axis=1) / self.gamma, single)


class ConvexTube:
    """Common interface of the tube families.  Subclasses fill in the slice geometry."""

    dim: int
    horizon: float

    def _check_t(self, t):
        t = float(t)
        if not np.isfinite(t) or t < -1e-12 or t > self.horizon * (1 + 1e-12) + 1e-12:
            raise InputError(f"time {t} outside [0, {self.horizon}]")
        return min(max(t, 0.0), self.horizon)

    # slice primitives, overridden per family
    def _project(self, t, pts):
        raise NotImplementedError

    def _depth(self, t, pts):
        """Signed depth: positive inside, zero on the boundary, negative outside (lower bound)."""
        raise NotImplementedError

    def chebyshev(self, t):
        """Deepest point of ``D_t`` and its inradius."""
        raise NotImplementedError

    def diameter_bound(self, t) -> float:
        """An upper bound on ``diam(D_t)``."""
        raise NotImplementedError

    def ray_exit(self, t, origin, directions):
        """Boundary points ``origin + s_max * u`` for unit ``directions`` from an interior ``origin``."""
        raise NotImplementedError

    def contains(self, t, y):
        """Strict membership in the open slice ``D_t``."""
        t = self._check_t(t)
        pts, single = _as_points(y, self.dim)
        return _unwrap(self._depth(t, pts) > 0.0, single)

    def contains_closure(self, t, y, tol=CLOSURE_TOL):
        """Membership in the closed slice, up to ``tol``."""
        t = self._check_t(t)
        pts, single = _as_points(y, self.dim)
        return _unwrap(self._depth(t, pts) >= -tol, single)

    def project(self, t, y):
        """Euclidean projection onto the closure of ``D_t``; identity on the closure."""
        t = self._check_t(t)
        pts, single = _as_points(y, self.dim)
        return _unwrap(self._project(t, pts), single)

    def distance(self, t, y):
        """``d(y, D_t)``: zero on the closure."""
        t = self._check_t(t)
        pts, single = _as_points(y, self.dim)
        return _unwrap(np.linalg.norm(pts - self._project(t, pts), axis=1), single)

    def boundary_distance(self, t, y):
        """Distance to the boundary ``dD_t`` (from inside or outside)."""
        t = self._check_t(t)
        pts, single = _as_points(y, self.dim)
        out = np.linalg.norm(pts - self._project(t, pts), axis=1)
        depth = self._depth(t, pts)
        return _unwrap(np.where(depth > 0, depth, out), single)

    def inward_unit_from_outside(self, t, y):
        """``-(y - pi(t,y)) / |y - pi(t,y)|`` for ``y`` outside the closure."""
        t = self._check_t(t)
        pts, single = _as_points(y, self.dim)
        gap = pts - self._project(t, pts)
        norm = np.linalg.norm(gap, axis=1)
        if np.any(norm <= CLOSURE_TOL):
            raise InputError("inward_unit_from_outside requires points outside the closed slice")
        return _unwrap(-gap / norm[:, None], single)

    def normal_cone(self, t, x, tol=1e-9) -> NormalConeSample:
        raise NotImplementedError


@dataclass(frozen=True)
class BallTube(ConvexTube):
    """Ball slices ``{y : |y - center| < radius(t)}``."""

    center: np.ndarray
    radius_fn: TimeFunction
    horizon: float
    dim: int = field(init=False)

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius_fn", as_time_function(self.radius_fn))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "dim", c.size)
        if self.horizon <= 0:
            raise ConfigurationError("tube horizon must be positive")

    def radius(self, t):
        return float(self.radius_fn(t))

    def _project(self, t, pts):
        r = self.radius(t)
        rel = pts - self.center
        norm = np.linalg.norm(rel, axis=1)
        outside = norm > r
        out = pts.copy()
        out[outside] = self.center + rel[outside] * (r / norm[outside])[:, None]
        return out

    def _depth(self, t, pts):
        return self.radius(t) - np.linalg.norm(pts - self.center, axis=1)

    def chebyshev(self, t):
        t = self._check_t(t)
        return self.center.copy(), self.radius(t)

    def diameter_bound(self, t):
        return 2.0 * max(self.radius(self._check_t(t)), 0.0)

    def ray_exit(self, t, origin, directions):
        t = self._check_t(t)
        u = np.atleast_2d(directions)
        rel = np.asarray(origin, dtype=float) - self.center
        r = self.radius(t)
        # |rel + s u|^2 = r^2 with |u| = 1
        b = u @ rel
        s = -b + np.sqrt(np.maximum(b * b - (rel @ rel - r * r), 0.0))
        return np.asarray(origin, dtype=float) + s[:, None] * u

    def normal_cone(self, t, x, tol=1e-9):
        t = self._check_t(t)
        x = np.asarray(x, dtype=float)
        rel = self.center - x
        dist = np.linalg.norm(rel)
        if abs(dist - self.radius(t)) > tol:
            raise InputError("normal_cone requires a boundary point")
        return NormalConeSample(base=x, generators=(rel / dist)[None, :])


@dataclass(frozen=True)
class HalfspaceTube(ConvexTube):
    """Polytope slices ``{y : <a_i, y> < b_i(t) for all i}`` with unit normals ``a_i``."""

    normals: np.ndarray
    offset_fns: tuple
    horizon: float
    dim: int = field(init=False)

    def __post_init__(self):
        a = np.atleast_2d(np.array(self.normals, dtype=float))
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms == 0) or not np.all(np.isfinite(a)):
            raise ConfigurationError("half-space normals must be finite and non-zero")
        a = a / norms[:, None]
        a.setflags(write=False)
        fns = tuple(as_time_function(f) for f in self.offset_fns)
        if len(fns) != a.shape[0]:
            raise ConfigurationError("one offset function is required per normal")
        object.__setattr__(self, "normals", a)
        object.__setattr__(self, "offset_fns", fns)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "dim", a.shape[1])
        if self.horizon <= 0:
            raise ConfigurationError("tube horizon must be positive")
        # axis-aligned faces only: projection is a clamp, no iteration needed
        axis_aligned = bool(np.all(np.sum(a != 0, axis=1) == 1) and np.all(np.abs(a).max(axis=1) == 1))
        object.__setattr__(self, "_axis_aligned", axis_aligned)

    def _box_limits(self, b):
        lower = np.full(self.dim, -np.inf)
        upper = np.full(self.dim, np.inf)
        for a, off in zip(self.normals, b):
            i = int(np.flatnonzero(a)[0])
            if a[i] > 0:
                upper[i] = min(upper[i], off)
            else:
                lower[i] = max(lower[i], -off)
        return lower, upper

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float], horizon: float):
        """Axis-aligned box with constant bounds."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        d = lower.size
        eye = np.eye(d)
        normals = np.vstack([eye, -eye])
        offsets = [[u] for u in upper] + [[-l] for l in lower]
        return cls(normals, offsets, horizon)

    def offsets(self, t):
        return np.array([float(f(t)) for f in self.offset_fns])

    def _project(self, t, pts):
        b = self.offsets(t)
        out = pts.copy()
        outside = np.any(pts @ self.normals.T > b, axis=1)
        if np.any(outside):
            if self._axis_aligned:
                lower, upper = self._box_limits(b)
                out[outside] = np.clip(pts[outside], lower, upper)
            else:
                out[outside] = _dykstra(pts[outside], self.normals, b)
        return out

    def _depth(self, t, pts):
        return np.min(self.offsets(t) - pts @ self.normals.T, axis=1)

    def chebyshev(self, t):
        t = self._check_t(t)
        a, b = self.normals, self.offsets(t)
        d = self.dim
        # maximise s subject to <a_i, P> + s <= b_i
        cost = np.zeros(d + 1)
        cost[-1] = -1.0
        res = linprog(
            cost,
            A_ub=np.hstack([a, np.ones((a.shape[0], 1))]),
            b_ub=b,
            bounds=[(None, None)] * d + [(None, None)],
            method="highs",
        )
        if res.status == 3:
            raise DomainError(f"slice at t={t} is unbounded")
        if res.status != 0:
            raise DomainError(f"slice at t={t} is empty")
        return res.x[:d], float(res.x[-1])

    def is_bounded(self) -> bool:
        """True when the recession cone ``{v : a_i . v <= 0}`` is trivial."""
        for i in range(self.dim):
            for sign in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[i] = -sign
                res = linprog(c, A_ub=self.normals, b_ub=np.zeros(len(self.normals)),
                              bounds=[(-1.0, 1.0)] * self.dim, method="highs")
                if res.status == 0 and -res.fun > 1e-12:
                    return False
        return True

    def bounding_box(self, t):
        t = self._check_t(t)
        a, b = self.normals, self.offsets(t)
        lo, hi = np.empty(self.dim), np.empty(self.dim)
        for i in range(self.dim):
            for sign, store in ((1.0, hi), (-1.0, lo)):
                c = np.zeros(self.dim)
                c[i] = -sign
                res = linprog(c, A_ub=a, b_ub=b, bounds=[(None, None)] * self.dim, method="highs")
                if res.status == 3:
                    raise DomainError(f"slice at t={t} is unbounded")
                if res.status != 0:
                    raise DomainError(f"slice at t={t} is empty")
                store[i] = res.x[i]
        return lo, hi

    def diameter_bound(self, t):
        lo, hi = self.bounding_box(t)
        return float(np.linalg.norm(hi - lo))

    def ray_exit(self, t, origin, directions):
        t = self._check_t(t)
        u = np.atleast_2d(directions)
        origin = np.asarray(origin, dtype=float)
        slack = self.offsets(t) - self.normals @ origin
        rate = u @ self.normals.T
        with np.errstate(divide="ignore"):
            steps = np.where(rate > 0, slack / np.where(rate > 0, rate, 1.0), np.inf)
        s = steps.min(axis=1)
        return origin + s[:, None] * u

    def normal_cone(self, t, x, tol=1e-9):
        t = self._check_t(t)
        x = np.asarray(x, dtype=float)
        slack = self.offsets(t) - self.normals @ x
        if np.any(slack < -tol) or np.min(slack) > tol:
            raise InputError("normal_cone requires a boundary point")
        active = np.abs(slack) <= tol
        return NormalConeSample(base=x, generators=-self.normals[active])


def _dykstra(pts, normals, offsets, max_iter=DYKSTRA_MAX_ITER, tol=DYKSTRA_TOL):
    """Project each row of ``pts`` onto ``{y : normals @ y <= offsets}`` by Dykstra's method."""
    x = pts.copy()
    incr = np.zeros((normals.shape[0],) + x.shape)
    for _ in range(max_iter):
        prev = x.copy()
        for i, (a, b) in enumerate(zip(normals, offsets)):
            z = x + incr[i]
            excess = np.maximum(z @ a - b, 0.0)
            x = z - excess[:, None] * a
            incr[i] = z - x
        if np.max(np.abs(x - prev)) < tol:
            return x
    residual = float(np.max(pts @ normals.T - offsets))
    raise NumericalError(
        f"Dykstra projection did not converge in {max_iter} iterations", residual=residual
    )


def interior_anchor(tube: ConvexTube, extra_points=None, validate_samples=1000, seed=0) -> InteriorAnchor:
    """Deepest point of ``D_T`` and a constant ``gamma`` for the anchor inequality.

    ``gamma = max(1, 1/m, diam/m)`` where ``m`` is the inradius of ``D_T`` and
    ``diam`` bounds the diameter of ``D_0`` together with ``extra_points``.
    Any ``gamma >= 1/m`` works because ``B(P, m)`` sits inside every slice.
    The result is checked on ``validate_samples`` random ``(t, y)`` pairs.
    """
    point, margin = tube.chebyshev(tube.horizon)
    if margin < MIN_INRADIUS:
        raise DomainError(f"terminal slice inradius {margin:.3g} below {MIN_INRADIUS}")
    diam = tube.diameter_bound(0.0)
    if extra_points is not None:
        extra = np.atleast_2d(np.asarray(extra_points, dtype=float))
        reach = np.max(np.linalg.norm(extra - point, axis=1)) if extra.size else 0.0
        diam = max(diam, diam / 2.0 + reach)
    gamma = max(1.0, 1.0 / margin, diam / margin)
    anchor = InteriorAnchor(point=np.asarray(point, dtype=float), margin=float(margin), gamma=float(gamma))
    if validate_samples:
        rng = np.random.default_rng(seed)
        worst = np.inf
        for t, y in _probe_pairs(tube, validate_samples, rng):
            worst = min(worst, float(np.min(anchor.slack(tube, t, y))))
        if worst < -1e-9:
            raise DomainError(f"anchor inequality violated by {-worst:.3g}")
    return anchor


def _probe_pairs(tube, samples, rng, chunks=10):
    """Random (time, points) batches spread around ``D_0`` at up to twice its size."""
    center, _ = tube.chebyshev(0.0)
    scale = max(tube.diameter_bound(0.0), 1e-6)
    per = max(1, samples // chunks)
    for _ in range(chunks):
        t = rng.uniform(0.0, tube.horizon)
        yield t, center + scale * rng.uniform(-1.0, 1.0, size=(per, tube.dim))


def _unit_directions(rng, count, dim):
    u = rng.standard_normal((count, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def modulus(tube: ConvexTube, r: float, samples: int = 256, times: int = 64, seed: int = 0) -> float:
    """Sampled modulus of continuity in time.

    Largest ``d(z, D_{t+r})`` over grid times ``t`` and boundary points ``z``
    of ``D_{t-r}``; both times are clipped to ``[0, T]``.
    """
    if not 0 < r <= tube.horizon:
        raise InputError(f"gap r={r} must lie in (0, {tube.horizon}]")
    rng = np.random.default_rng(seed)
    dirs = _unit_directions(rng, samples, tube.dim)
    anchor, _ = tube.chebyshev(tube.horizon)
    best = 0.0
    for t in np.linspace(0.0, tube.horizon, times):
        early, late = max(t - r, 0.0), min(t + r, tube.horizon)
        z = tube.ray_exit(early, anchor, dirs)
        best = max(best, float(np.max(tube.distance(late, z))))
    return best


@dataclass
class TubeValidationReport:
    nonexpansion_violations: list = field(default_factory=list)  # (t, t_next, y)
    empty_slices: list = field(default_factory=list)
    unbounded: bool = False

    @property
    def ok(self) -> bool:
        return not (self.nonexpansion_violations or self.empty_slices or self.unbounded)

    def describe(self) -> str:
        if self.ok:
            return "tube valid"
        parts = []
        if self.unbounded:
            parts.append("slices are unbounded")
        if self.empty_slices:
            parts.append(f"degenerate slice at t={self.empty_slices[0]:.6g}")
        if self.nonexpansion_violations:
            t, t2, y = self.nonexpansion_violations[0]
            parts.append(
                f"non-expansion violated: y={np.round(y, 6).tolist()} lies in D_{t2:.6g} but not in D_{t:.6g}"
            )
        return "; ".join(parts)

    def to_dict(self):
        return {
            "ok": self.ok,
            "unbounded": self.unbounded,
            "empty_slices": [float(t) for t in self.empty_slices],
            "nonexpansion_violations": [
                {"t": float(t), "t_next": float(t2), "y": np.asarray(y).tolist()}
                for t, t2, y in self.nonexpansion_violations
            ],
        }


def validate_tube(tube: ConvexTube, times, samples: int = 64, strict: bool = True, seed: int = 0):
    """Check non-emptiness, boundedness and non-expansion on the given times.

    ``times`` is an increasing array (or a :class:`~rbsde.noise.TimeGrid`).
    With ``strict`` a :class:`ConfigurationError` naming the first offending
    ``(t, t', y)`` is raised; otherwise the report is returned as is.
    """
    times = np.asarray(getattr(times, "times", times), dtype=float)
    report = TubeValidationReport()
    rng = np.random.default_rng(seed)
    dirs = _unit_directions(rng, samples, tube.dim)
    if isinstance(tube, HalfspaceTube) and not tube.is_bounded():
        report.unbounded = True
    centers = []
    for t in times if not report.unbounded else ():
        try:
            c, m = tube.chebyshev(t)
        except DomainError as exc:
            if "unbounded" in str(exc):
                report.unbounded = True
                break
            report.empty_slices.append(float(t))
            centers.append(None)
            continue
        if m < MIN_INRADIUS:
            report.empty_slices.append(float(t))
            centers.append(None)
        else:
            centers.append(c)
    if not report.unbounded:
        for k in range(len(times) - 1):
            c_next = centers[k + 1]
            if c_next is None or centers[k] is None:
                continue
            t, t_next = times[k], times[k + 1]
            z = tube.ray_exit(t_next, c_next, dirs)
            # interior points along the rays as well as the boundary ones
            z = np.vstack([z, c_next + 0.5 * (z - c_next)])
            bad = ~tube.contains_closure(t, z, tol=1e-9)
            if np.any(bad):
                report.nonexpansion_violations.append((float(t), float(t_next), z[np.argmax(bad)]))
    if strict and not report.ok:
        raise ConfigurationError(report.describe())
    return report
