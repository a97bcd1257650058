"""Shared fixtures-as-functions for the test suite."""
import numpy as np

from rbsde.geometry import BallTube, HalfspaceTube
from rbsde.scenarios import REGISTRY, build_tube


def pentagon(horizon=1.0):
    """A regular pentagon shrinking linearly in time; exercises the Dykstra path."""
    angles = 2 * np.pi * np.arange(5) / 5 + 0.3
    normals = np.column_stack([np.cos(angles), np.sin(angles)])
    return HalfspaceTube(normals, [[1.5, -0.4]] * 5, horizon)


def reference_tubes():
    """The four tubes of the lemma suite: two registered balls, a registered box, a polytope.

    Values are ``(tube, tolerance)``; projections of the polytope are iterative.
    """
    sbj = REGISTRY["shrinking-ball-jumps"]
    mart = REGISTRY["martingale"]
    return {
        "shrinking-ball": (build_tube(sbj["tube"], sbj["horizon"]), 1e-9),
        "constant-ball": (BallTube([0.0, 0.0], [2.0, -0.5], 1.0), 1e-9),
        "martingale-interval": (build_tube(mart["tube"], mart["horizon"]), 1e-9),
        "pentagon": (pentagon(), 1e-6),
    }


def sample_cloud(tube, rng, count, spread=2.0):
    """Points spread around ``D_0`` at up to ``spread`` times its diameter."""
    center, _ = tube.chebyshev(0.0)
    scale = tube.diameter_bound(0.0)
    return center + spread * scale * rng.uniform(-1.0, 1.0, size=(count, tube.dim))


ACCEPTANCE_LINES = []


def verdict(number, title, ok, detail):
    """Record and print one acceptance line; returns ``ok`` for the caller to assert."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
