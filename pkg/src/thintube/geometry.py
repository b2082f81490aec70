"""Center-curve geometry for thin tubes.

Cubic interpolating splines over a partition of [0, 1], orthonormal frames
along them, and the local tube coordinates
``r(s, eta, zeta) = p(s) + [n b] R_theta(s) (eta, zeta)^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GeometryError, IrregularCurveError

# |p' x p''| / |p'|^2 below this counts as locally straight
CURVATURE_THRESHOLD = 1e-8
# |p'| below this is treated as a vanishing speed
MIN_SPEED = 1e-10
# nearest-point searches in curve_distance use this many times more samples
DISTANCE_REFINEMENT = 20


@dataclass(frozen=True)
class Partition:
    """Strictly increasing knots ``0 = t_1 < ... < t_n = 1`` with ``n >= 4``."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        if knots.size < 4:
            raise GeometryError(f"partition needs at least 4 knots, got {knots.size}")
        if not np.all(np.isfinite(knots)):
            raise GeometryError("partition knots must be finite")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise GeometryError("partition must start at 0 and end at 1")
        if np.any(np.diff(knots) <= 0.0):
            raise GeometryError("partition knots must be strictly increasing")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, n: int) -> "Partition":
        return cls(np.linspace(0.0, 1.0, n))

    @property
    def n(self) -> int:
        return self.knots.size


def _boundary(closed: bool) -> str:
    return "periodic" if closed else "not-a-knot"


@dataclass(frozen=True)
class CurveSpline:
    """Interpolating cubic spline ``p: [0, 1] -> R^3``.

    Open curves use not-a-knot end conditions, closed curves periodic ones.
    For a closed curve the last control point must repeat the first.
    """

    partition: Partition
    control_points: np.ndarray
    closed: bool = False
    _pp: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.array(self.control_points, dtype=float)
        if pts.shape != (self.partition.n, 3):
            raise GeometryError(
                f"expected {self.partition.n} control points in R^3, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise GeometryError("control points must be finite")
        if self.closed and not np.allclose(pts[0], pts[-1], rtol=0.0, atol=1e-12):
            raise GeometryError("closed curve needs its last control point equal to the first")
        if self.closed:
            pts[-1] = pts[0]
        pts.setflags(write=False)
        object.__setattr__(self, "control_points", pts)
        object.__setattr__(
            self, "_pp", CubicSpline(self.partition.knots, pts, bc_type=_boundary(self.closed))
        )

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def coefficients(self) -> np.ndarray:
        """Control coordinates as a point-major vector of length ``3n``."""
        return self.control_points.ravel().copy()

    def with_points(self, points) -> "CurveSpline":
        """Same partition, new control points; a closed curve re-ties its last point."""
        points = np.array(points, dtype=float).reshape(self.n, 3)
        if self.closed:
            points[-1] = points[0]
        return CurveSpline(self.partition, points, self.closed)

    def __call__(self, s, order: int = 0) -> np.ndarray:
        return spline_eval(self, s, order)


def spline_fit(partition: Partition, points, closed: bool = False) -> CurveSpline:
    """Interpolate ``points`` at the knots of ``partition``."""
    return CurveSpline(partition, np.asarray(points, dtype=float), closed)


def _check_parameter(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < -1e-12) or np.any(s > 1.0 + 1e-12):
        raise GeometryError("curve parameter must lie in [0, 1]")
    return np.clip(s, 0.0, 1.0)


def spline_eval(spline: CurveSpline, s, order: int = 0) -> np.ndarray:
    """Value (``order=0``) or derivative of order 1, 2, 3 at ``s``.

    Returns shape ``(3,)`` for scalar ``s`` and ``(len(s), 3)`` otherwise.
    The third derivative is piecewise constant; at a knot the limit from
    the left is returned (from the right at ``s = 0``).
    """
    if order not in (0, 1, 2, 3):
        raise GeometryError(f"derivative order must be 0..3, got {order}")
    s = _check_parameter(s)
    if order == 3:
        # step just below s so the segment to the left is used at knots
        s = np.where(s > 0.0, np.nextafter(s, -np.inf), s)
    out = spline._pp(s, order)
    if order == 0:
        # knots return their control points exactly, without polynomial round-off
        knots = spline.partition.knots
        idx = np.clip(np.searchsorted(knots, s), 0, knots.size - 1)
        hit = knots[idx] == s
        if np.any(hit):
            out[hit] = spline.control_points[idx[hit]]
    return out


def spline_basis_matrix(partition: Partition, nodes, order: int = 0,
                        closed: bool = False) -> np.ndarray:
    """Matrix ``B`` with ``B @ X`` equal to the order-th derivative at ``nodes``.

    ``X`` is the ``(n, 3)`` array of control points; the same matrix acts on
    every coordinate. For closed curves column ``n - 1`` is zero because the
    last control point is tied to the first.
    """
    if order not in (0, 1, 2, 3):
        raise GeometryError(f"derivative order must be 0..3, got {order}")
    nodes = _check_parameter(np.atleast_1d(nodes))
    n = partition.n
    if closed:
        values = np.zeros((n, n))
        values[: n - 1, : n - 1] = np.eye(n - 1)
        values[n - 1, 0] = 1.0
    else:
        values = np.eye(n)
    pp = CubicSpline(partition.knots, values, bc_type=_boundary(closed))
    return pp(nodes, order)


@dataclass(frozen=True)
class FrameField:
    """Orthonormal frame ``(t, n, b)`` and curvature data sampled at nodes."""

    nodes: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    binormal: np.ndarray
    curvature: np.ndarray
    torsion: np.ndarray
    speed: np.ndarray
    frenet: bool

    @property
    def matrices(self) -> np.ndarray:
        """``V = [t n b]`` per node, shape ``(Q, 3, 3)``."""
        return np.stack([self.tangent, self.normal, self.binormal], axis=-1)


def _any_perpendicular(t: np.ndarray) -> np.ndarray:
    axis = np.zeros(3)
    axis[np.argmin(np.abs(t))] = 1.0
    v = np.cross(t, axis)
    return v / np.linalg.norm(v)


def _double_reflection(points, tangents, start, seed_normal) -> np.ndarray:
    """Rotation-minimizing normals transported from node ``start`` both ways."""
    q = points.shape[0]
    normals = np.empty_like(tangents)
    normals[start] = seed_normal
    for order in (range(start, q - 1), range(start, 0, -1)):
        for i in order:
            j = i + 1 if order.step == 1 else i - 1
            r = normals[i]
            v1 = points[j] - points[i]
            c1 = v1 @ v1
            if c1 > 0.0:
                r_l = r - (2.0 / c1) * (v1 @ r) * v1
                t_l = tangents[i] - (2.0 / c1) * (v1 @ tangents[i]) * v1
            else:
                r_l, t_l = r, tangents[i]
            v2 = tangents[j] - t_l
            c2 = v2 @ v2
            r_new = r_l - (2.0 / c2) * (v2 @ r_l) * v2 if c2 > 0.0 else r_l
            # re-orthogonalize against round-off drift
            r_new = r_new - (r_new @ tangents[j]) * tangents[j]
            normals[j] = r_new / np.linalg.norm(r_new)
    return normals


def frame_field(spline: CurveSpline, nodes) -> FrameField:
    """Frame, curvature and torsion of ``spline`` at the parameter ``nodes``.

    If the curve bends at every node and the Frenet normal never reverses
    between consecutive nodes, the frame is the Frenet frame with ``n`` along
    ``(p' x p'') x p'``. Otherwise the normal is transported by
    rotation-minimizing double reflection, seeded with the Frenet normal of
    the first bending node or with an arbitrary perpendicular vector.
    """
    nodes = np.atleast_1d(np.asarray(nodes, dtype=float))
    d1 = spline_eval(spline, nodes, 1)
    d2 = spline_eval(spline, nodes, 2)
    d3 = spline_eval(spline, nodes, 3)
    speed = np.linalg.norm(d1, axis=1)
    bad = np.flatnonzero(speed < MIN_SPEED)
    if bad.size:
        raise IrregularCurveError(
            f"vanishing speed |p'| at s = {nodes[bad[0]]:.6g}"
        )
    t = d1 / speed[:, None]
    cross = np.cross(d1, d2)
    cross_norm = np.linalg.norm(cross, axis=1)
    curvature = cross_norm / speed**3
    bending = cross_norm / speed**2 > CURVATURE_THRESHOLD

    torsion = np.zeros_like(speed)
    torsion[bending] = np.einsum("ij,ij->i", cross[bending], d3[bending]) / cross_norm[bending] ** 2

    frenet_n = np.cross(cross, d1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frenet_n = frenet_n / np.linalg.norm(frenet_n, axis=1)[:, None]

    # an inflection between nodes shows up as a flip of the Frenet normal
    flips = np.all(bending) and np.any(np.einsum("ij,ij->i", frenet_n[:-1], frenet_n[1:]) < 0.0)
    if np.all(bending) and not flips:
        normal = frenet_n
        frenet = True
    else:
        points = spline_eval(spline, nodes, 0)
        if np.any(bending):
            start = int(np.argmax(bending))
            seed = frenet_n[start]
        else:
            start = 0
            seed = _any_perpendicular(t[0])
        normal = _double_reflection(points, t, start, seed)
        frenet = False
    binormal = np.cross(t, normal)
    return FrameField(nodes, t, normal, binormal, curvature, torsion, speed, frenet)


def _frame_at(spline: CurveSpline, s: float) -> FrameField:
    return frame_field(spline, [s])


def rotation_2d(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class TubeCoordinates:
    """Local coordinates around a center curve with twist angle ``theta(s)``.

    ``radius`` must satisfy ``radius * max curvature < 1``; the maximum is
    taken over ``samples`` equispaced parameter values.
    """

    curve: CurveSpline
    radius: float
    theta: Optional[Callable[[float], float]] = None
    samples: int = 401

    def __post_init__(self):
        if not self.radius > 0.0:
            raise GeometryError("tube radius must be positive")
        kappa_max = frame_field(self.curve, np.linspace(0.0, 1.0, self.samples)).curvature.max()
        if self.radius * kappa_max >= 1.0:
            raise GeometryError(
                f"tube radius {self.radius:g} violates r * kappa_max < 1 (kappa_max = {kappa_max:g})"
            )

    def angle(self, s: float) -> float:
        return 0.0 if self.theta is None else float(self.theta(s))

    def _check_radius(self, eta: float, zeta: float):
        if np.hypot(eta, zeta) >= self.radius:
            raise GeometryError(
                f"(eta, zeta) = ({eta:g}, {zeta:g}) lies outside the tube radius {self.radius:g}"
            )


def tube_point(tc: TubeCoordinates, s: float, eta: float, zeta: float) -> np.ndarray:
    tc._check_radius(eta, zeta)
    frame = _frame_at(tc.curve, s)
    offset = rotation_2d(tc.angle(s)) @ np.array([eta, zeta])
    nb = np.column_stack([frame.normal[0], frame.binormal[0]])
    return spline_eval(tc.curve, s) + nb @ offset


def tube_jacobian(tc: TubeCoordinates, s: float, eta: float, zeta: float) -> float:
    """Jacobian determinant of the tube coordinates per unit arc length.

    ``1 - kappa(s) * (cos(theta) eta - sin(theta) zeta)``; for a curve that is
    not parametrized by arc length the determinant of ``D r`` is this value
    times ``|p'(s)|``.
    """
    tc._check_radius(eta, zeta)
    kappa = _frame_at(tc.curve, s).curvature[0]
    angle = tc.angle(s)
    return 1.0 - kappa * (np.cos(angle) * eta - np.sin(angle) * zeta)


# Center curves of the torus, figure and helix test objects.

def torus_curve(s):
    s = np.asarray(s, dtype=float)
    return np.stack([np.cos(2 * np.pi * s) + 1.0, np.sin(2 * np.pi * s) + 1.0,
                     -np.ones_like(s)], axis=-1)


def figure_curve(s):
    s = np.asarray(s, dtype=float)
    c, sn = np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)
    return np.stack([2.0 * c / (1.0 + sn**2), 4.0 * c * sn / (1.0 + 2.0 * sn**2),
                     4.0 * s**2], axis=-1)


def helix_curve(s):
    s = np.asarray(s, dtype=float)
    return np.stack([np.cos(4 * np.pi * s), np.sin(4 * np.pi * s), 6.0 * s], axis=-1)


NAMED_CURVES = {
    "torus": (torus_curve, True),
    "figure": (figure_curve, False),
    "helix": (helix_curve, False),
}

# straight-segment initial guesses used for the reconstructions
INITIAL_SEGMENTS = {
    "torus": ((0.0, 2.0, 0.0), (1.0, 2.0, 0.0)),
    "figure": ((2.0, 0.0, 0.0), (2.0, 2.0, 0.0)),
    "helix": ((0.0, -1.0, 1.0), (0.0, -2.0, 1.0)),
}


def named_spline(name: str, n: int = 30) -> CurveSpline:
    """Sample one of the built-in center curves onto an ``n``-point spline."""
    try:
        curve, closed = NAMED_CURVES[name]
    except KeyError:
        raise GeometryError(f"unknown curve {name!r}; choose from {sorted(NAMED_CURVES)}") from None
    partition = Partition.uniform(n)
    return spline_fit(partition, curve(partition.knots), closed)


def segment_spline(start: Sequence[float], end: Sequence[float], n: int = 30) -> CurveSpline:
    partition = Partition.uniform(n)
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    points = start + partition.knots[:, None] * (end - start)
    return spline_fit(partition, points)


def curve_distance(a: CurveSpline, b, samples: int = 200) -> float:
    """Symmetrized discrete L2 distance between two curves.

    ``b`` may be a spline or a callable on [0, 1]. Each curve is sampled at
    ``samples`` parameters; the mean squared distances from these points to
    a finer sampling of the other curve are averaged over both directions.
    The result does not depend on how either curve is parametrized or
    oriented.
    """
    def sample(curve, m):
        s = np.linspace(0.0, 1.0, m)
        return spline_eval(curve, s) if isinstance(curve, CurveSpline) else np.asarray(curve(s))

    def one_way(x, y):
        # mean squared distance from the points x to the densely sampled curve y
        d2 = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
        return d2.min(axis=1).mean()

    dense = DISTANCE_REFINEMENT * samples
    return float(np.sqrt(0.5 * (one_way(sample(a, samples), sample(b, dense))
                                + one_way(sample(b, samples), sample(a, dense)))))


def curve_diameter(points) -> float:
    points = np.asarray(points)
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    return float(np.sqrt(d2.max()))
