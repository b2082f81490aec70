import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import perturbed_helix
from thintube.errors import GeometryError, IrregularCurveError
from thintube.geometry import (CurveSpline, Partition, TubeCoordinates, curve_diameter,
                               curve_distance, frame_field, helix_curve, named_spline,
                               segment_spline, spline_basis_matrix, spline_eval, spline_fit,
                               torus_curve, tube_jacobian, tube_point)


def circle_spline(n=60, radius=1.0):
    part = Partition.uniform(n)
    t = 2 * np.pi * part.knots
    pts = np.stack([radius * np.cos(t), radius * np.sin(t), 0 * t], axis=1)
    pts[-1] = pts[0]
    return spline_fit(part, pts, closed=True)


# -- partitions and splines -----------------------------------------------

@pytest.mark.parametrize("knots", [
    [0.0, 0.5, 1.0],                 # too few
    [0.0, 0.3, 0.3, 0.6, 1.0],       # repeated knot
    [0.1, 0.3, 0.6, 1.0],            # does not start at 0
    [0.0, 0.3, 0.6, 0.9],            # does not end at 1
])
def test_partition_rejects_degenerate_knots(knots):
    with pytest.raises(GeometryError):
        Partition(np.array(knots))


def test_control_point_count_must_match():
    with pytest.raises(GeometryError):
        spline_fit(Partition.uniform(5), np.zeros((4, 3)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.02, 1.0), min_size=3, max_size=12),
       st.lists(st.floats(-3, 3), min_size=12, max_size=12))
def test_not_a_knot_reproduces_cubics(gaps, coef):
    knots = np.concatenate([[0.0], np.cumsum(gaps)])
    knots /= knots[-1]
    c = np.array(coef).reshape(4, 3)

    def q(t):
        t = np.asarray(t)[..., None]
        return c[0] + c[1] * t + c[2] * t**2 + c[3] * t**3

    spline = spline_fit(Partition(knots), q(knots))
    s = np.linspace(0, 1, 97)
    assert np.allclose(spline_eval(spline, s), q(s), atol=1e-10, rtol=0)


def test_cubic_example_t3_t_1():
    part = Partition(np.array([0.0, 0.2, 0.45, 0.7, 1.0]))
    q = lambda t: np.stack([t**3, t, np.ones_like(t)], axis=-1)
    spline = spline_fit(part, q(part.knots))
    s = np.linspace(0, 1, 51)
    assert np.allclose(spline_eval(spline, s), q(s), atol=1e-12)
    assert np.allclose(spline_eval(spline, s, 3), [[6.0, 0.0, 0.0]] * 51, atol=1e-9)


def test_interpolates_control_points_exactly():
    spline = named_spline("figure", 30)
    assert np.array_equal(spline_eval(spline, spline.partition.knots), spline.control_points)


def test_constant_points_are_irregular():
    spline = spline_fit(Partition.uniform(6), np.ones((6, 3)))
    with pytest.raises(IrregularCurveError):
        frame_field(spline, [0.3])


def test_torus_spline_start_point():
    assert np.allclose(spline_eval(named_spline("torus"), 0.0), [2.0, 1.0, -1.0], atol=1e-15)


def test_torus_interpolation_error_is_fourth_order():
    errors = []
    for n in (11, 21, 41, 81):
        spline = named_spline("torus", n)
        mid = (spline.partition.knots[:-1] + spline.partition.knots[1:]) / 2
        errors.append(np.abs(spline_eval(spline, mid) - torus_curve(mid)).max())
    orders = np.log2(np.array(errors[:-1]) / errors[1:])
    assert np.all(orders > 3.8)


def test_segment_has_constant_derivative():
    spline = spline_fit(Partition.uniform(5), np.outer(np.linspace(0, 1, 5), [1.0, 0.0, 0.0]))
    d = spline_eval(spline, np.linspace(0, 1, 17), 1)
    assert np.allclose(d, [1.0, 0.0, 0.0], atol=1e-13)


def test_helix_start_derivative_is_close_to_closed_form():
    d = spline_eval(named_spline("helix", 30), 0.0, 1)
    exact = np.array([0.0, 4 * np.pi, 6.0])
    assert np.linalg.norm(d - exact) < 0.02 * np.linalg.norm(exact)


def test_parameter_outside_unit_interval():
    spline = named_spline("helix", 10)
    with pytest.raises(GeometryError):
        spline_eval(spline, 1.01)
    with pytest.raises(GeometryError):
        spline_eval(spline, 0.5, order=4)


def test_third_derivative_is_left_limit_at_knots():
    spline = named_spline("helix", 10)
    knot = spline.partition.knots[4]
    left = spline_eval(spline, knot - 1e-3, 3)
    right = spline_eval(spline, knot + 1e-3, 3)
    assert not np.allclose(left, right)
    assert np.array_equal(spline_eval(spline, knot, 3), left)


def test_closed_spline_requires_matching_endpoints():
    pts = torus_curve(Partition.uniform(8).knots)
    pts[-1] += 0.1
    with pytest.raises(GeometryError):
        spline_fit(Partition.uniform(8), pts, closed=True)


def test_closed_spline_is_periodic():
    spline = named_spline("torus", 12)
    for order in (0, 1, 2):
        assert np.allclose(spline_eval(spline, 0.0, order), spline_eval(spline, 1.0, order), atol=1e-9)


def test_with_points_reties_closed_curve():
    spline = named_spline("torus", 12)
    pts = spline.control_points.copy()
    pts[-1] += 5.0
    assert np.array_equal(spline.with_points(pts).control_points[-1], pts[0])


# -- basis matrices ---------------------------------------------------------

def test_basis_at_knots_selects_control_points():
    part = Partition.uniform(9)
    assert np.allclose(spline_basis_matrix(part, part.knots, 0), np.eye(9), atol=1e-14)


def test_basis_derivative_of_collinear_points_is_parallel():
    part = Partition(np.array([0.0, 0.1, 0.4, 0.5, 0.8, 1.0]))
    d = np.array([1.0, -2.0, 0.5])
    x = np.outer(np.random.default_rng(1).uniform(-2, 2, 6), d)
    rows = spline_basis_matrix(part, np.linspace(0, 1, 23), 1) @ x
    assert np.allclose(np.cross(rows, d), 0.0, atol=1e-12)


@pytest.mark.parametrize("closed", [False, True])
@pytest.mark.parametrize("order", [0, 1, 2])
def test_basis_matches_evaluation(rng, order, closed):
    part = Partition.uniform(10)
    pts = rng.standard_normal((10, 3))
    if closed:
        pts[-1] = pts[0]
    spline = spline_fit(part, pts, closed)
    nodes = np.sort(rng.uniform(0, 1, 40))
    B = spline_basis_matrix(part, nodes, order, closed)
    assert np.allclose(B @ pts, spline_eval(spline, nodes, order), atol=1e-12, rtol=0)


def test_basis_columns_match_finite_differences(rng):
    part = Partition.uniform(7)
    pts = rng.standard_normal((7, 3))
    nodes = rng.uniform(0, 1, 15)
    B = spline_basis_matrix(part, nodes, 1)
    h = 0.5  # the spline is linear in its control points
    for i in range(7):
        e = np.zeros((7, 3))
        e[i, 0] = h
        fd = (spline_eval(spline_fit(part, pts + e), nodes, 1)
              - spline_eval(spline_fit(part, pts - e), nodes, 1))[:, 0] / (2 * h)
        assert np.allclose(fd, B[:, i], rtol=1e-10, atol=1e-12)


# -- frames -------------------------------------------------------------------

def assert_orthonormal_frames(frame):
    V = frame.matrices
    assert np.allclose(V.transpose(0, 2, 1) @ V, np.eye(3), atol=1e-10)
    assert np.allclose(np.linalg.det(V), 1.0, atol=1e-10)


def test_circle_frame():
    frame = frame_field(circle_spline(80), np.linspace(0, 1, 41))
    assert frame.frenet
    # second derivatives of the spline carry an O(h^2) error
    assert np.allclose(frame.curvature, 1.0, atol=1e-3)
    assert np.allclose(frame.torsion, 0.0, atol=1e-8)
    assert np.allclose(np.abs(frame.binormal[:, 2]), 1.0, atol=1e-10)
    assert_orthonormal_frames(frame)


def test_helix_curvature_and_torsion_are_constant():
    a = 4 * np.pi
    spline = named_spline("helix", 200)
    frame = frame_field(spline, np.linspace(0.1, 0.9, 33))
    assert np.allclose(frame.curvature, a**2 / (a**2 + 36), rtol=5e-4)
    assert np.allclose(frame.torsion, 6 * a / (a**2 + 36), rtol=1e-3)


def test_frenet_relations_per_arc_length():
    spline = named_spline("helix", 200)
    s = np.linspace(0.2, 0.8, 7)
    h = 1e-5
    frame = frame_field(spline, s)
    plus, minus = frame_field(spline, s + h), frame_field(spline, s - h)
    ds = frame.speed[:, None] * 2 * h
    dt = (plus.tangent - minus.tangent) / ds
    db = (plus.binormal - minus.binormal) / ds
    assert np.allclose(dt, frame.curvature[:, None] * frame.normal, atol=1e-6)
    assert np.allclose(db, -frame.torsion[:, None] * frame.normal, atol=1e-6)


def test_straight_segment_frame_is_transported():
    spline = segment_spline((0.0, -1.0, 1.0), (0.0, -2.0, 1.0), n=10)
    frame = frame_field(spline, np.linspace(0, 1, 21))
    assert not frame.frenet
    assert np.allclose(frame.curvature, 0.0, atol=1e-12)
    assert np.allclose(frame.torsion, 0.0)
    assert np.allclose(frame.normal, frame.normal[0], atol=1e-12)
    assert_orthonormal_frames(frame)


def test_mixed_frame_is_continuous():
    # straight piece followed by a bend
    part = Partition.uniform(9)
    s = part.knots
    pts = np.stack([s, np.where(s > 0.5, (s - 0.5) ** 2, 0.0), 0 * s], axis=1)
    frame = frame_field(spline_fit(part, pts), np.linspace(0, 1, 200))
    assert_orthonormal_frames(frame)
    jumps = np.linalg.norm(np.diff(frame.normal, axis=0), axis=1)
    assert jumps.max() < 0.1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_frames_are_orthonormal(seed):
    rng = np.random.default_rng(seed)
    spline = perturbed_helix(rng, 12, 0.3)
    frame = frame_field(spline, np.linspace(0, 1, 50))
    assert_orthonormal_frames(frame)
    assert np.allclose(frame.tangent * frame.speed[:, None], spline_eval(spline, frame.nodes, 1))


# -- tube coordinates -------------------------------------------------------

def test_tube_jacobian_center_and_straight():
    tc = TubeCoordinates(named_spline("helix", 30), 0.5)
    assert tube_jacobian(tc, 0.4, 0.0, 0.0) == 1.0
    line = TubeCoordinates(segment_spline((0, 0, 0), (1, 1, 0), 8), 0.7)
    assert tube_jacobian(line, 0.3, 0.4, -0.2) == pytest.approx(1.0, abs=1e-12)


def numeric_jacobian(tc, s, eta, zeta, h=1e-6):
    cols = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        arg_p = np.array([s, eta, zeta]) + e
        arg_m = np.array([s, eta, zeta]) - e
        cols.append((tube_point(tc, *arg_p) - tube_point(tc, *arg_m)) / (2 * h))
    return np.linalg.det(np.column_stack(cols))


def test_circle_tube_jacobian_and_determinant():
    tc = TubeCoordinates(circle_spline(200), 0.5)
    assert tube_jacobian(tc, 0.3, 0.3, 0.0) == pytest.approx(0.7, abs=1e-4)
    speed = frame_field(tc.curve, [0.3]).speed[0]
    assert numeric_jacobian(tc, 0.3, 0.3, 0.0) / speed == pytest.approx(
        tube_jacobian(tc, 0.3, 0.3, 0.0), rel=1e-6)


@pytest.mark.parametrize("twist", [None, lambda s: 0.7 + 2.0 * s])
def test_tube_jacobian_matches_determinant_on_helix(twist):
    tc = TubeCoordinates(named_spline("helix", 60), 0.4, theta=twist)
    for s, eta, zeta in [(0.3, 0.2, 0.1), (0.55, -0.1, 0.25), (0.8, 0.0, -0.3)]:
        speed = frame_field(tc.curve, [s]).speed[0]
        assert numeric_jacobian(tc, s, eta, zeta) / speed == pytest.approx(
            tube_jacobian(tc, s, eta, zeta), rel=1e-6)


def test_tube_point_rotation_cases():
    spline = named_spline("helix", 30)
    frame = frame_field(spline, [0.4])
    p = spline_eval(spline, 0.4)
    tc = TubeCoordinates(spline, 0.5)
    assert np.array_equal(tube_point(tc, 0.4, 0.0, 0.0), p)
    assert np.allclose(tube_point(tc, 0.4, 0.1, 0.0), p + 0.1 * frame.normal[0], atol=1e-14)
    quarter = TubeCoordinates(spline, 0.5, theta=lambda s: np.pi / 2)
    assert np.allclose(tube_point(quarter, 0.4, 0.1, 0.0), p + 0.1 * frame.binormal[0], atol=1e-14)


def test_tube_radius_checks():
    with pytest.raises(GeometryError):
        TubeCoordinates(circle_spline(40), 1.2)
    tc = TubeCoordinates(circle_spline(40), 0.5)
    with pytest.raises(GeometryError):
        tube_jacobian(tc, 0.2, 0.4, 0.4)
    with pytest.raises(GeometryError):
        tube_point(tc, 0.2, 0.6, 0.0)


def test_tube_jacobian_positive_inside_radius(rng):
    tc = TubeCoordinates(named_spline("figure", 40), 0.2)
    for _ in range(50):
        r, a = 0.2 * np.sqrt(rng.uniform(0, 0.99)), rng.uniform(0, 2 * np.pi)
        assert tube_jacobian(tc, rng.uniform(0, 1), r * np.cos(a), r * np.sin(a)) > 0


# -- curve distance -----------------------------------------------------------

def test_curve_distance_ignores_orientation_and_shift():
    spline = named_spline("torus", 40)
    assert curve_distance(spline, torus_curve) < 1e-3
    assert curve_distance(spline, lambda s: torus_curve(1 - s)) < 1e-3
    assert curve_distance(spline, lambda s: torus_curve((s + 0.37) % 1)) < 1e-3
    assert curve_distance(spline, lambda s: torus_curve(s**2)) < 1e-3
    shifted = lambda s: torus_curve(s) + [0.0, 0.0, 0.1]
    assert curve_distance(spline, shifted) == pytest.approx(0.1, rel=1e-2)


def test_curve_diameter_of_helix_points():
    pts = helix_curve(np.linspace(0, 1, 200))
    assert curve_diameter(pts) == pytest.approx(np.hypot(6.0, 0.0), rel=0.02)


def test_spline_is_immutable():
    spline = named_spline("helix", 8)
    assert isinstance(spline, CurveSpline)
    with pytest.raises(ValueError):
        spline.control_points[0, 0] = 1.0
