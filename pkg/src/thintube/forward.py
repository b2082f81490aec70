"""Leading-order far and near fields of a thin tube with circular cross-section."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import GeometryError
from .geometry import CurveSpline, FrameField, frame_field, spline_eval
from .polarization import Material, disk_tensor, lift_tensor

# directions per block when evaluating the far field; fixed so that the
# result does not depend on the number of workers
DIRECTION_BLOCK = 64


@dataclass(frozen=True)
class PlaneWave:
    """Incident field ``A exp(i k theta . x)`` with ``A`` perpendicular to ``theta``."""

    k: float
    theta: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        A = np.asarray(self.A, dtype=complex)
        if not self.k > 0.0:
            raise ValueError("wavenumber must be positive")
        if theta.shape != (3,) or abs(np.linalg.norm(theta) - 1.0) > 1e-12:
            raise ValueError("propagation direction must be a unit 3-vector")
        if A.shape != (3,) or not np.any(A):
            raise ValueError("polarization must be a nonzero 3-vector")
        if abs(A.real @ theta) > 1e-12 or abs(A.imag @ theta) > 1e-12:
            raise ValueError("polarization must be perpendicular to the propagation direction")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "A", A)

    @classmethod
    def from_frequency(cls, frequency: float, theta, A, material: Material) -> "PlaneWave":
        theta = np.asarray(theta, dtype=float)
        return cls(material.wavenumber(frequency), theta / np.linalg.norm(theta), A)

    def field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(1j * self.k * (x @ self.theta))[..., None] * self.A

    def curl(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (1j * self.k * np.exp(1j * self.k * (x @ self.theta)))[..., None] * np.cross(self.theta, self.A)


def default_wave(material: Optional[Material] = None) -> PlaneWave:
    """100 MHz plane wave along (1, -1, 1)/sqrt(3) with A = (-1, i, 1 + i)."""
    material = material or Material(1.0, 1.0, 1.0)
    return PlaneWave.from_frequency(100e6, [1.0, -1.0, 1.0], [-1.0, 1j, 1.0 + 1j], material)


@dataclass(frozen=True)
class FarFieldGrid:
    """Equiangular grid on the sphere with trapezoid weights.

    Directions are ordered with ``l`` fastest: index ``(j - 1) * 2N + (l - 1)``.
    """

    N: int
    samples: Optional[np.ndarray] = None
    polar: np.ndarray = field(init=False, repr=False)
    azimuth: np.ndarray = field(init=False, repr=False)
    directions: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("grid parameter N must be an integer >= 2")
        N = int(self.N)
        polar = np.arange(1, N) * np.pi / N
        azimuth = np.arange(2 * N) * np.pi / N
        T, P = np.meshgrid(polar, azimuth, indexing="ij")
        dirs = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
        object.__setattr__(self, "polar", polar)
        object.__setattr__(self, "azimuth", azimuth)
        object.__setattr__(self, "directions", dirs.reshape(-1, 3))
        object.__setattr__(self, "weights", (np.pi**2 / N**2 * np.sin(T)).ravel())
        if self.samples is not None:
            samples = np.asarray(self.samples, dtype=complex)
            if samples.shape != (self.size, 3):
                raise ValueError(f"expected samples of shape {(self.size, 3)}, got {samples.shape}")
            object.__setattr__(self, "samples", samples)

    @property
    def size(self) -> int:
        return 2 * self.N * (self.N - 1)

    @property
    def indices(self) -> np.ndarray:
        """``(j, l)`` pairs, 1-based, in storage order."""
        j, l = np.meshgrid(np.arange(1, self.N), np.arange(1, 2 * self.N + 1), indexing="ij")
        return np.stack([j.ravel(), l.ravel()], axis=-1)

    def with_samples(self, samples) -> "FarFieldGrid":
        return replace(self, samples=samples)


def sphere_norm(grid: FarFieldGrid, samples=None) -> float:
    """Discrete L2(S^2) norm ``sqrt(sum w_jl |E(y_jl)|^2)``."""
    samples = grid.samples if samples is None else np.asarray(samples)
    if samples is None:
        raise ValueError("grid carries no samples")
    return float(np.sqrt(np.sum(grid.weights * np.sum(np.abs(samples) ** 2, axis=-1))))


def rel_diff(grid: FarFieldGrid, approx, reference) -> float:
    """Relative discrete L2 difference of two far fields on ``grid``."""
    ref_norm = sphere_norm(grid, reference)
    if ref_norm == 0.0:
        raise ValueError("reference far field has zero norm")
    return sphere_norm(grid, np.asarray(approx) - np.asarray(reference)) / ref_norm


def simpson_weights(M: int) -> np.ndarray:
    """Composite Simpson weights on [0, 1] with ``M = 2m + 1`` nodes."""
    if M < 3 or M % 2 == 0:
        raise ValueError(f"Simpson rule needs an odd node count >= 3, got {M}")
    w = np.ones(M)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * (M - 1))


@dataclass(frozen=True)
class QuadratureRule:
    """Composite Simpson rule with ``M`` nodes on each segment of a partition.

    Nodes shared by adjacent segments are stored once, giving
    ``(M - 1)(n - 1) + 1`` nodes. ``segment_weights[j]`` restricts the rule to
    segment ``j``.
    """

    knots: np.ndarray
    M: int
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    segment_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        local = simpson_weights(self.M)
        segments = knots.size - 1
        count = (self.M - 1) * segments + 1
        nodes = np.empty(count)
        seg_w = np.zeros((segments, count))
        u = np.linspace(0.0, 1.0, self.M)
        for j in range(segments):
            a, b = knots[j], knots[j + 1]
            sl = slice(j * (self.M - 1), (j + 1) * (self.M - 1) + 1)
            nodes[sl] = a + (b - a) * u
            seg_w[j, sl] = (b - a) * local
        nodes[-1] = knots[-1]
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "segment_weights", seg_w)
        object.__setattr__(self, "weights", seg_w.sum(axis=0))

    @classmethod
    def for_spline(cls, spline: CurveSpline, M: int) -> "QuadratureRule":
        return cls(spline.partition.knots, M)

    @property
    def size(self) -> int:
        return self.nodes.size


@dataclass
class CurveSamples:
    """Spline derivatives, frame and polarization tensors at quadrature nodes."""

    points: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    frame: FrameField
    c_mu: float
    c_eps: float
    M_mu: np.ndarray
    M_eps: np.ndarray


def sample_curve(spline: CurveSpline, material: Material, quad: QuadratureRule) -> CurveSamples:
    """Evaluate everything the integrands need at the quadrature nodes."""
    frame = frame_field(spline, quad.nodes)
    m_mu = disk_tensor(1.0, material.mu_r)
    m_eps = disk_tensor(1.0, material.eps_r)
    return CurveSamples(
        points=spline_eval(spline, quad.nodes, 0),
        d1=spline_eval(spline, quad.nodes, 1),
        d2=spline_eval(spline, quad.nodes, 2),
        frame=frame,
        c_mu=m_mu[0, 0],
        c_eps=m_eps[0, 0],
        M_mu=lift_tensor(frame, m_mu).matrices,
        M_eps=lift_tensor(frame, m_eps).matrices,
    )


def _far_field_block(dirs, cs: CurveSamples, weights, material, wave) -> np.ndarray:
    k = wave.k
    phase = np.exp(1j * k * ((wave.theta[None, :] - dirs) @ cs.points.T))
    wq = weights * cs.frame.speed
    out = np.zeros((dirs.shape[0], 3), dtype=complex)
    if material.mu_r != 1.0:
        a = cs.M_mu @ np.cross(wave.theta, wave.A)
        s_mu = phase @ (wq[:, None] * a)
        out -= (material.mu_r - 1.0) * np.cross(dirs, s_mu)
    if material.eps_r != 1.0:
        b = cs.M_eps @ wave.A
        s_eps = phase @ (wq[:, None] * b)
        out += (material.eps_r - 1.0) * (s_eps - np.sum(dirs * s_eps, axis=1)[:, None] * dirs)
    return (k * material.rho) ** 2 * np.pi * out


def far_field(spline: CurveSpline, material: Material, wave: PlaneWave,
              grid, quad: QuadratureRule, workers: int = 1,
              samples: Optional[CurveSamples] = None) -> np.ndarray:
    """Leading-order electric far field at the grid directions.

    ``grid`` is a :class:`FarFieldGrid` or an ``(D, 3)`` array of unit
    directions. Returns complex samples of shape ``(D, 3)``.
    """
    dirs = grid.directions if isinstance(grid, FarFieldGrid) else np.atleast_2d(np.asarray(grid, dtype=float))
    cs = samples if samples is not None else sample_curve(spline, material, quad)
    blocks = [dirs[i:i + DIRECTION_BLOCK] for i in range(0, dirs.shape[0], DIRECTION_BLOCK)]

    def work(block):
        return _far_field_block(block, cs, quad.weights, material, wave)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, 3), dtype=complex)


def helmholtz_kernel(k: float, x, y) -> np.ndarray:
    """``exp(i k |x - y|) / (4 pi |x - y|)`` broadcast over leading axes."""
    r = np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1)
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


def dyadic_green(k: float, x, y) -> np.ndarray:
    """``G(x, y) = Phi I + k^-2 grad grad Phi`` with the closed-form Hessian."""
    R = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(R, axis=-1)
    rhat = R / r[..., None]
    phi = np.exp(1j * k * r) / (4.0 * np.pi * r)
    d1 = phi * (1j * k - 1.0 / r)
    d2 = phi * ((1j * k - 1.0 / r) ** 2 + 1.0 / r**2)
    outer = rhat[..., :, None] * rhat[..., None, :]
    eye = np.eye(3)
    hess = (d1 / r)[..., None, None] * (eye - outer) + d2[..., None, None] * outer
    return phi[..., None, None] * eye + hess / k**2


def green_gradient(k: float, x, y) -> np.ndarray:
    """``grad_x Phi(x - y)``."""
    R = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(R, axis=-1)
    phi = np.exp(1j * k * r) / (4.0 * np.pi * r)
    return (phi * (1j * k - 1.0 / r) / r)[..., None] * R


def near_field(spline: CurveSpline, material: Material, wave: PlaneWave, points,
               quad: QuadratureRule, min_distance: float = 1e-3) -> np.ndarray:
    """Leading-order scattered electric field at observation ``points``.

    ``rho^2 pi [ (mu_r - 1) int curl_x G M_mu curl E_i |p'| ds
    + k^2 (eps_r - 1) int G M_eps E_i |p'| ds ]``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cs = sample_curve(spline, material, quad)
    k = wave.k
    dist = np.linalg.norm(points[:, None, :] - cs.points[None, :, :], axis=-1)
    if np.any(dist.min(axis=1) <= min_distance):
        raise GeometryError("observation point too close to the center curve")
    wq = quad.weights * cs.frame.speed
    out = np.zeros((points.shape[0], 3), dtype=complex)
    x = points[:, None, :]
    y = cs.points[None, :, :]
    if material.mu_r != 1.0:
        a = np.einsum("qij,qj->qi", cs.M_mu, wave.curl(cs.points))
        grad = green_gradient(k, x, y)
        out += (material.mu_r - 1.0) * np.einsum("q,pqi->pi", wq, np.cross(grad, a[None, :, :]))
    if material.eps_r != 1.0:
        b = np.einsum("qij,qj->qi", cs.M_eps, wave.field(cs.points))
        G = dyadic_green(k, x, y)
        out += k**2 * (material.eps_r - 1.0) * np.einsum("q,pqij,qj->pi", wq, G, b)
    return material.rho**2 * np.pi * out
