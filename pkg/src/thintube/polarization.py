"""Polarization tensors of thin tubes.

The cross-section tensor ``m`` (2x2) is lifted pointwise along the center
curve to ``M(s) = V(s) diag(1, m) V(s)^T`` with ``V = [t n b]``: the tangent
is an eigenvector with eigenvalue 1 and the normal plane carries the
(possibly twisted) cross-section tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import GeometryError, NumericalError
from .geometry import FrameField, rotation_2d

EPS0 = 8.854e-12
MU0 = 4e-7 * np.pi


@dataclass(frozen=True)
class Material:
    """Relative material parameters of the tube and its cross-section radius."""

    eps_r: float
    mu_r: float
    rho: float
    eps0: float = EPS0
    mu0: float = MU0

    def __post_init__(self):
        for name in ("eps_r", "mu_r", "rho", "eps0", "mu0"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be positive, got {value!r}")

    def wavenumber(self, frequency: float) -> float:
        """``k = omega sqrt(eps0 mu0)`` for a frequency in Hz."""
        return 2.0 * np.pi * frequency * np.sqrt(self.eps0 * self.mu0)


def disk_tensor(gamma0: float, gamma1: float) -> np.ndarray:
    """Closed-form tensor ``2 gamma0 / (gamma1 + gamma0) I`` of a disk."""
    if not (gamma0 > 0.0 and gamma1 > 0.0):
        raise ValueError("material parameters must be positive")
    return 2.0 * gamma0 / (gamma1 + gamma0) * np.eye(2)


def tensor_bounds(gamma_r: float) -> tuple[float, float]:
    """Range of ``xi . M xi`` over unit ``xi`` for relative contrast ``gamma_r``."""
    return min(1.0, 1.0 / gamma_r), max(1.0, 1.0 / gamma_r)


def unit_disk(x, y):
    return x**2 + y**2 < 1.0


def numeric_cross_section_tensor(indicator: Callable = unit_disk, gamma0: float = 1.0,
                                 gamma1: float = 2.5, resolution: int = 400,
                                 truncation: float = 8.0, boundary: str = "dipole",
                                 subsamples: int = 4) -> np.ndarray:
    """Finite-difference approximation of the cross-section tensor.

    Solves ``div(g grad w_j) = -div((g - gamma0) e_j)`` where ``g`` is
    ``gamma1`` inside the cross-section ``{indicator(x, y)}`` (a subset of the
    unit disk) and ``gamma0`` outside, and returns the symmetrized
    ``m_ij = delta_ij + mean over B of d w_j / d x_i``.

    The grid has ``resolution`` cells per side of ``[-truncation, truncation]^2``.
    With ``boundary="dipole"`` the outer faces of the square carry the decay
    condition ``x . grad w = -w``, which a dipole field satisfies exactly;
    ``boundary="dirichlet"`` sets ``w = 0`` outside the disk of radius
    ``truncation`` instead, which biases the result by O(truncation^-2).

    Cell coefficients are harmonic means over ``subsamples^2`` points per
    cell; face coefficients are harmonic means of the two adjacent cells.
    """
    if not (gamma0 > 0.0 and gamma1 > 0.0):
        raise ValueError("material parameters must be positive")
    if resolution < 8:
        raise ValueError("resolution too coarse")
    if boundary not in ("dipole", "dirichlet"):
        raise ValueError(f"unknown boundary condition {boundary!r}")
    h = 2.0 * truncation / resolution
    centers = -truncation + h * (np.arange(resolution) + 0.5)
    X, Y = np.meshgrid(centers, centers, indexing="ij")

    # area fraction of the cross-section in each cell
    offsets = h * ((np.arange(subsamples) + 0.5) / subsamples - 0.5)
    sx = (centers[:, None] + offsets[None, :]).ravel()
    inside = np.asarray(indicator(sx[:, None], sx[None, :]), dtype=float)
    frac = inside.reshape(resolution, subsamples, resolution, subsamples).mean(axis=(1, 3))
    if frac.sum() == 0.0:
        raise ValueError("cross-section is empty at this resolution")
    if np.any(frac[np.hypot(X, Y) > 1.0 + h] > 0.0):
        raise ValueError("cross-section must lie inside the unit disk")
    if gamma1 == gamma0:
        return np.eye(2)

    coef = 1.0 / (frac / gamma1 + (1.0 - frac) / gamma0)

    if boundary == "dirichlet":
        active = X**2 + Y**2 < truncation**2
    else:
        active = np.ones_like(X, dtype=bool)
    index = -np.ones((resolution, resolution), dtype=np.int64)
    index[active] = np.arange(active.sum())
    unknowns = int(active.sum())

    rows, cols, vals = [], [], []
    rhs = np.zeros((unknowns, 2))
    faces = []
    for axis in (0, 1):
        # faces between cell a and its neighbour b along this axis
        a = [slice(None), slice(None)]
        b = [slice(None), slice(None)]
        a[axis], b[axis] = slice(0, -1), slice(1, None)
        ca, cb = coef[tuple(a)], coef[tuple(b)]
        face = 2.0 * ca * cb / (ca + cb)
        ia, ib = index[tuple(a)], index[tuple(b)]
        # flux through the face: face * (w_b - w_a) / h + (face - gamma0) e_axis
        source = face - gamma0
        faces.append((ia, ib, source))
        both = (ia >= 0) & (ib >= 0)
        rows += [ia[both], ib[both], ia[ia >= 0], ib[ib >= 0]]
        cols += [ib[both], ia[both], ia[ia >= 0], ib[ib >= 0]]
        vals += [face[both] / h**2, face[both] / h**2,
                 -face[ia >= 0] / h**2, -face[ib >= 0] / h**2]
        # A w = -div(source flux)
        np.add.at(rhs[:, axis], ia[ia >= 0], -source[ia >= 0] / h)
        np.add.at(rhs[:, axis], ib[ib >= 0], source[ib >= 0] / h)

    if boundary == "dipole":
        # Ghost value w_g behind an outer face from R (w_g - w_a) / h
        # + y_f dw/dtau = -(w_a + w_g) / 2, with dw/dtau from cell a's
        # neighbours along the boundary.
        scale = truncation / h + 0.5
        last = resolution - 1
        for axis in (0, 1):
            for side, sign in ((0, -1.0), (last, 1.0)):
                for k in range(resolution):
                    cell = (side, k) if axis == 0 else (k, side)
                    row = index[cell]
                    lo, hi = max(k - 1, 0), min(k + 1, last)
                    nlo = index[(side, lo) if axis == 0 else (lo, side)]
                    nhi = index[(side, hi) if axis == 0 else (hi, side)]
                    tang = centers[k]
                    # flux gamma0 (w_g - w_a) / h^2 with
                    # w_g - w_a = -(w_a + tang * (w_hi - w_lo) / ((hi - lo) h)) / scale
                    factor = gamma0 / h**2 / scale
                    rows += [np.array([row, row, row])]
                    cols += [np.array([row, nhi, nlo])]
                    dt = tang / ((hi - lo) * h)
                    vals += [np.array([-factor, -factor * dt, factor * dt])]

    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(unknowns, unknowns))
    try:
        w = splu(A).solve(rhs)
    except RuntimeError as exc:
        raise NumericalError(f"cross-section solve failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise NumericalError("cross-section solve produced non-finite values")

    # (gamma1 - gamma0) |B| m_ij = integral of (g - gamma0) d_i (x_j + w_j),
    # evaluated with the face fluxes of the scheme
    area = frac.sum() * h**2
    padded = np.vstack([w, np.zeros((1, 2))])
    m = np.empty((2, 2))
    for i, (ia, ib, source) in enumerate(faces):
        for j in range(2):
            grad = (padded[ib, j] - padded[ia, j]) / h + (1.0 if i == j else 0.0)
            m[i, j] = np.sum(source * grad) * h**2 / ((gamma1 - gamma0) * area)
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class TensorField:
    """Symmetric 3x3 tensors ``M(s_q)`` at the nodes of a frame field."""

    nodes: np.ndarray
    matrices: np.ndarray


def lift_tensor(frame: FrameField, m2d, theta: Optional[Callable] = None) -> TensorField:
    """Pointwise 3D tensor ``V diag(1, R m R^T) V^T`` along the curve."""
    m2d = np.asarray(m2d, dtype=float)
    if m2d.shape != (2, 2):
        raise ValueError("cross-section tensor must be 2x2")
    q = frame.nodes.size
    block = np.zeros((q, 3, 3))
    block[:, 0, 0] = 1.0
    if theta is None:
        block[:, 1:, 1:] = m2d
    else:
        for i, s in enumerate(frame.nodes):
            rot = rotation_2d(theta(s))
            block[:, 1:, 1:][i] = rot @ m2d @ rot.T
    V = frame.matrices
    if V.shape[0] != q:
        raise ValueError("frame and node count mismatch")
    return TensorField(frame.nodes, V @ block @ np.swapaxes(V, -1, -2))


def disk_lift(tangent: np.ndarray, c: float) -> np.ndarray:
    """``c I + (1 - c) t t^T``: the lift of ``c I_2`` for unit tangents ``t``."""
    return c * np.eye(3) + (1.0 - c) * tangent[..., :, None] * tangent[..., None, :]


def tensor_shape_derivative(tangent, normal, binormal, speed, c: float, dprime) -> np.ndarray:
    """Derivative of ``M = V diag(1, c, c) V^T`` when ``p'`` moves along ``dprime``.

    ``V'`` has columns ``((h'.n) n + (h'.b) b, -(h'.n) t, -(h'.b) t) / |p'|``
    and the result is ``V' M0 V^T + V M0 V'^T``. All vector arguments may
    carry leading batch dimensions.
    """
    t, n, b = (np.asarray(v, dtype=float) for v in (tangent, normal, binormal))
    hp = np.asarray(dprime, dtype=float)
    speed = np.asarray(speed, dtype=float)
    if np.any(speed <= 0.0):
        raise GeometryError("tensor derivative needs a nonzero speed |p'|")
    hn = np.sum(hp * n, axis=-1)[..., None]
    hb = np.sum(hp * b, axis=-1)[..., None]
    inv = 1.0 / speed[..., None]
    dV = np.stack([(hn * n + hb * b) * inv, -hn * t * inv, -hb * t * inv], axis=-1)
    V = np.stack([t, n, b], axis=-1)
    M0 = np.diag([1.0, c, c])
    first = dV @ M0 @ np.swapaxes(V, -1, -2)
    return first + np.swapaxes(first, -1, -2)
