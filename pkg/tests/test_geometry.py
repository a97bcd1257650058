import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import pentagon, reference_tubes, sample_cloud
from rbsde.exceptions import ConfigurationError, DomainError, InputError, NumericalError
from rbsde.geometry import (
    BallTube,
    HalfspaceTube,
    _dykstra,
    as_time_function,
    interior_anchor,
    modulus,
    validate_tube,
)

SQRT2 = np.sqrt(2.0)


@pytest.fixture
def ball():
    return BallTube([0.0, 0.0], [2.0, -1.0], 1.0)  # r(t) = 2 - t


@pytest.fixture
def box():
    return HalfspaceTube.box([-1.0, -1.0], [1.0, 1.0], 1.0)


# documented examples ---------------------------------------------------------

def test_contains_examples(ball, box):
    assert ball.contains(0.0, [1.0, 0.0])
    assert not ball.contains(1.0, [1.5, 0.0])
    assert not box.contains(0.5, [1.0, 0.0])
    assert box.contains_closure(0.5, [1.0, 0.0])


def test_distance_examples(ball, box):
    assert ball.distance(0.0, [3.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    assert ball.distance(0.3, [0.2, -0.1]) == 0.0
    assert box.distance(0.2, [0.5, 0.5]) == 0.0
    assert box.distance(0.0, [2.0, 2.0]) == pytest.approx(SQRT2, abs=1e-15)


def test_project_examples(ball, box):
    np.testing.assert_allclose(ball.project(0.0, [3.0, 0.0]), [2.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(box.project(0.0, [2.0, 2.0]), [1.0, 1.0], atol=1e-15)


def test_inward_unit_examples(ball, box):
    np.testing.assert_allclose(ball.inward_unit_from_outside(0.0, [3.0, 0.0]), [-1.0, 0.0])
    np.testing.assert_allclose(box.inward_unit_from_outside(0.0, [0.0, 2.0]), [0.0, -1.0])
    np.testing.assert_allclose(box.inward_unit_from_outside(0.0, [2.0, 2.0]), [-1 / SQRT2, -1 / SQRT2])
    with pytest.raises(InputError):
        box.inward_unit_from_outside(0.0, [0.0, 0.0])


def test_time_out_of_range_is_input_error(ball):
    with pytest.raises(InputError):
        ball.contains(1.5, [0.0, 0.0])
    with pytest.raises(InputError):
        ball.distance(-0.1, [0.0, 0.0])


def test_interior_anchor_examples(ball, box):
    a = interior_anchor(ball)
    np.testing.assert_allclose(a.point, [0.0, 0.0], atol=1e-12)
    assert a.margin == pytest.approx(1.0)
    assert a.gamma >= 1.0
    b = interior_anchor(box)
    np.testing.assert_allclose(b.point, [0.0, 0.0], atol=1e-9)
    assert b.margin == pytest.approx(1.0, abs=1e-9)


def test_interior_anchor_degenerate_slice():
    flat = HalfspaceTube.box([0.0, -1.0], [0.0, 1.0], 1.0)
    with pytest.raises(DomainError):
        interior_anchor(flat)


def test_anchor_inequality_dense(box):
    for tube, _ in reference_tubes().values():
        anchor = interior_anchor(tube, validate_samples=0)
        rng = np.random.default_rng(1)
        for t in rng.uniform(0, tube.horizon, 20):
            slack = anchor.slack(tube, t, sample_cloud(tube, rng, 500))
            assert slack.min() >= -1e-9


def test_modulus_examples(ball):
    constant = HalfspaceTube.box([-1.0], [1.0], 1.0)
    assert modulus(constant, 0.2) == 0.0
    for r in (0.05, 0.1, 0.25):
        assert modulus(ball, r) == pytest.approx(2 * r, rel=1e-9)
    values = [modulus(ball, r) for r in (0.4, 0.1, 0.01, 0.001)]
    assert values == sorted(values, reverse=True)
    assert values[-1] < 1e-2


def test_modulus_polytope_is_monotone():
    tube = pentagon()
    values = [modulus(tube, r, samples=64, times=32) for r in (0.02, 0.1, 0.3)]
    assert values[0] <= values[1] <= values[2]
    assert values[0] > 0


def test_validate_tube_examples(ball):
    assert validate_tube(ball, np.linspace(0, 1, 33)).ok
    expanding = BallTube([0.0, 0.0], [1.0, 1.0], 1.0)
    with pytest.raises(ConfigurationError, match="non-expansion"):
        validate_tube(expanding, np.linspace(0, 1, 33))
    growing_face = HalfspaceTube([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
                                 [[1.0, 0.5], [1.0], [1.0], [1.0]], 1.0)
    report = validate_tube(growing_face, np.linspace(0, 1, 17), strict=False)
    assert report.nonexpansion_violations and not report.ok
    t, t_next, y = report.nonexpansion_violations[0]
    assert t_next > t and not growing_face.contains_closure(t, y)


def test_validate_tube_unbounded_and_empty():
    strip = HalfspaceTube([[1.0, 0.0], [-1.0, 0.0]], [[1.0], [1.0]], 1.0)
    report = validate_tube(strip, [0.0, 1.0], strict=False)
    assert report.unbounded
    vanishing = HalfspaceTube([[1.0], [-1.0]], [[1.0, -2.0], [1.0]], 1.0)  # upper face crosses the lower one
    report = validate_tube(vanishing, np.linspace(0, 1, 11), strict=False)
    assert report.empty_slices


def test_polynomial_time_functions():
    f = as_time_function([2.0, -0.5, 0.25])
    assert f(2.0) == pytest.approx(2.0 - 1.0 + 1.0)
    g = as_time_function(lambda t: 3.0 - t)
    assert g(1.0) == 2.0


# projection properties ---------------------------------------------------------

@pytest.mark.parametrize("name", list(reference_tubes()))
def test_projection_idempotent_and_closure_fixed(name):
    tube, tol = reference_tubes()[name]
    rng = np.random.default_rng(3)
    tol = 1e-12 if tol == 1e-9 else 1e-8
    for t in rng.uniform(0, tube.horizon, 10):
        y = sample_cloud(tube, rng, 400)
        p = tube.project(t, y)
        np.testing.assert_allclose(tube.project(t, p), p, atol=tol)
        inside = tube.contains_closure(t, y)
        assert np.array_equal(p[inside], y[inside])  # bitwise identity on the closure
        np.testing.assert_allclose(np.linalg.norm(y - p, axis=1), tube.distance(t, y), atol=1e-15)


@pytest.mark.parametrize("name", list(reference_tubes()))
def test_squared_distance_convex(name):
    tube, _ = reference_tubes()[name]
    rng = np.random.default_rng(4)
    t = 0.3 * tube.horizon
    y, z = sample_cloud(tube, rng, 2000), sample_cloud(tube, rng, 2000)
    theta = rng.uniform(size=(2000, 1))
    lhs = tube.distance(t, theta * y + (1 - theta) * z) ** 2
    rhs = theta[:, 0] * tube.distance(t, y) ** 2 + (1 - theta[:, 0]) * tube.distance(t, z) ** 2
    assert np.all(lhs <= rhs + 1e-8)


@pytest.mark.parametrize("name", list(reference_tubes()))
def test_normal_cone_ball_exclusion(name):
    tube, _ = reference_tubes()[name]
    rng = np.random.default_rng(5)
    t = 0.5 * tube.horizon
    outside = sample_cloud(tube, rng, 200, spread=3.0)
    outside = outside[tube.distance(t, outside) > 1e-3][:30]
    rho = 0.05
    for x in tube.project(t, outside):
        cone = tube.normal_cone(t, x)
        assert len(cone.generators) >= 1
        for v in cone.generators:
            assert np.linalg.norm(v) == pytest.approx(1.0)
            u = rng.standard_normal((200, tube.dim))
            u *= (rho * rng.uniform(0, 0.999, (200, 1)) ** (1 / tube.dim)) / np.linalg.norm(u, axis=1, keepdims=True)
            assert not np.any(tube.contains(t, x - rho * v + u))


def test_box_corner_cone_has_two_generators(box):
    cone = box.normal_cone(0.0, [1.0, 1.0])
    gens = sorted(map(tuple, np.round(cone.generators, 12)))
    assert gens == [(-1.0, 0.0), (0.0, -1.0)]


def test_dykstra_nonconvergence_reports_residual():
    tube = pentagon()
    pts = np.array([[5.0, 4.0]])
    with pytest.raises(NumericalError) as info:
        _dykstra(pts, tube.normals, tube.offsets(0.0), max_iter=1)
    assert info.value.residual is not None and info.value.residual > 0


def test_dykstra_matches_quadratic_program():
    """The polytope projection agrees with a brute-force minimization."""
    from scipy.optimize import minimize

    tube = pentagon()
    rng = np.random.default_rng(6)
    for y in sample_cloud(tube, rng, 20, spread=2.5):
        cons = [{"type": "ineq", "fun": lambda x, a=a, b=b: b - a @ x}
                for a, b in zip(tube.normals, tube.offsets(0.2))]
        ref = minimize(lambda x: np.sum((x - y) ** 2), x0=np.zeros(2), constraints=cons,
                       method="SLSQP", options={"ftol": 1e-14, "maxiter": 500}).x
        np.testing.assert_allclose(tube.project(0.2, y), ref, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.floats(0.0, 1.0),
)
def test_ball_projection_nonexpansive(y1, y2, t):
    tube = BallTube([0.5, -0.5], [2.0, -1.0], 1.0)
    p1, p2 = tube.project(t, np.array(y1)), tube.project(t, np.array(y2))
    assert np.linalg.norm(p1 - p2) <= np.linalg.norm(np.subtract(y1, y2)) + 1e-12
    assert np.linalg.norm(p1 - tube.center) <= tube.radius(t) * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(0.0, 1.0))
def test_polytope_projection_obtuse_angle(y, t):
    tube = pentagon()
    y = np.array(y)
    p = tube.project(t, y)
    corners = tube.project(t, 10 * np.array([[1, 0], [0, 1], [-1, 0], [0, -1], [1, 1], [-1, -1.0]]))
    assert np.all((corners - p) @ (y - p) <= 1e-6)
