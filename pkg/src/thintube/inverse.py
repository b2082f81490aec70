"""Regularized Gauss-Newton reconstruction of the center curve.

The objective is ``|P(x)|^2`` for the stacked real residual

* data block: ``sqrt(w_jl) (T(p) - E)(y_jl) / ||E||``, Re/Im of 3 components,
* curvature block: ``alpha1 sqrt(w_q) kappa_vec(s_q)`` at the Simpson nodes,
  with ``kappa_vec = (p'' - (p''.t) t) / |p'|^2`` of length ``kappa``,
* length block: ``alpha2 psi_j``, the deviation of segment ``j``'s length
  from the mean segment length,

where ``x`` holds the spline control points in point-major order.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import IrregularCurveError, NumericalError
from .forward import (CurveSamples, FarFieldGrid, PlaneWave, QuadratureRule,
                      far_field, sample_curve, sphere_norm)
from .geometry import CurveSpline, spline_basis_matrix
from .polarization import Material, tensor_shape_derivative

log = logging.getLogger(__name__)

BLOCKS = ("data", "curvature", "length")


@dataclass
class SolverConfig:
    alpha1: float = 0.2
    alpha2: float = 0.9
    s_max: float = 1.0
    line_search_steps: int = 10
    max_iterations: int = 250
    # share of Phi above which a block counts as dominating
    dominance: float = 0.5
    # a line-search point must lower Phi by this relative amount to count
    improvement: float = 1e-3
    check_derivatives: bool = False

    def __post_init__(self):
        if self.alpha1 < 0.0 or self.alpha2 < 0.0:
            raise ValueError("regularization parameters must be nonnegative")
        if not self.s_max > 0.0:
            raise ValueError("s_max must be positive")
        if self.line_search_steps < 1 or self.max_iterations < 0:
            raise ValueError("line_search_steps must be >= 1 and max_iterations >= 0")


@dataclass
class ResidualSystem:
    residual: np.ndarray
    jacobian: Optional[np.ndarray]
    blocks: dict

    @property
    def value(self) -> float:
        return float(self.residual @ self.residual)

    @property
    def contributions(self) -> dict:
        return {name: float(self.residual[sl] @ self.residual[sl]) for name, sl in self.blocks.items()}


@dataclass
class IterationRecord:
    iteration: int
    control_points: np.ndarray
    phi: float
    contributions: dict
    step: float
    alpha1: float
    alpha2: float
    event: str

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "control_points": self.control_points.tolist(),
            "phi": self.phi,
            "contributions": self.contributions,
            "step": self.step,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "event": self.event,
        }


def residual_length(N: int, M: int, n: int) -> int:
    return 12 * N * (N - 1) + 3 * ((M - 1) * (n - 1) + 1) + (n - 1)


def _cross_matrix(v: np.ndarray) -> np.ndarray:
    """Matrices ``[v]_x`` with ``[v]_x u = v x u``, batched over leading axes."""
    out = np.zeros(v.shape + (3,), dtype=v.dtype)
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


class ResidualModel:
    """Residual ``P_N`` and its Jacobian for a fixed partition and data set.

    Basis matrices of the spline at the quadrature nodes are computed once;
    a residual evaluation costs one far-field evaluation.
    """

    def __init__(self, template: CurveSpline, material: Material, wave: PlaneWave,
                 data: FarFieldGrid, quad: QuadratureRule, workers: int = 1):
        if data.samples is None:
            raise ValueError("data grid carries no samples")
        self.data_norm = sphere_norm(data)
        if self.data_norm == 0.0:
            raise ValueError("far-field data has zero norm")
        self.template = template
        self.material = material
        self.wave = wave
        self.data = data
        self.quad = quad
        self.workers = workers
        part = template.partition
        self.B0 = spline_basis_matrix(part, quad.nodes, 0, template.closed)
        self.B1 = spline_basis_matrix(part, quad.nodes, 1, template.closed)
        self.B2 = spline_basis_matrix(part, quad.nodes, 2, template.closed)
        self.n = part.n
        nd = data.size
        nq = quad.size
        self.blocks = {
            "data": slice(0, 6 * nd),
            "curvature": slice(6 * nd, 6 * nd + 3 * nq),
            "length": slice(6 * nd + 3 * nq, 6 * nd + 3 * nq + self.n - 1),
        }
        self.size = 6 * nd + 3 * nq + self.n - 1
        self._sqrt_w = np.sqrt(quad.weights)
        self._length_w = quad.weights[None, :] / (self.n - 1) - quad.segment_weights
        self._data_scale = np.sqrt(data.weights) / self.data_norm

    def spline(self, x) -> CurveSpline:
        return self.template.with_points(x)

    # -- residual -------------------------------------------------------
    def _data_residual(self, E: np.ndarray) -> np.ndarray:
        diff = (E - self.data.samples) * self._data_scale[:, None]
        return np.stack([diff.real, diff.imag], axis=-1).ravel()

    def _curvature_vectors(self, d1, d2):
        sp2 = np.sum(d1 * d1, axis=1)
        dot = np.sum(d1 * d2, axis=1)
        return d2 / sp2[:, None] - (dot / sp2**2)[:, None] * d1

    def system(self, x, alpha1: float, alpha2: float, jacobian: bool = True) -> ResidualSystem:
        spline = self.spline(x)
        cs = sample_curve(spline, self.material, self.quad)
        E = far_field(spline, self.material, self.wave, self.data, self.quad,
                      workers=self.workers, samples=cs)
        kv = self._curvature_vectors(cs.d1, cs.d2)
        lengths = self._length_w @ cs.frame.speed
        residual = np.concatenate([
            self._data_residual(E),
            (alpha1 * self._sqrt_w[:, None] * kv).ravel(),
            alpha2 * lengths,
        ])
        J = self._jacobian(cs, alpha1, alpha2) if jacobian else None
        return ResidualSystem(residual, J, dict(self.blocks))

    def objective(self, x, alpha1: float, alpha2: float) -> float:
        r = self.system(x, alpha1, alpha2, jacobian=False).residual
        return float(r @ r)

    # -- Jacobian -------------------------------------------------------
    def _jacobian(self, cs: CurveSamples, alpha1: float, alpha2: float) -> np.ndarray:
        n, nq = self.n, self.quad.size
        J = np.zeros((self.size, 3 * n))
        J[self.blocks["data"]] = self._data_jacobian(cs)

        d1, d2 = cs.d1, cs.d2
        sp2 = np.sum(d1 * d1, axis=1)[:, None, None]
        dot = np.sum(d1 * d2, axis=1)[:, None, None]
        eye = np.eye(3)
        outer11 = d1[:, :, None] * d1[:, None, :]
        # derivative of the curvature vector with respect to p' and p''
        D1 = (-2.0 * d2[:, :, None] * d1[:, None, :] / sp2**2
              - dot * eye / sp2**2
              - d1[:, :, None] * d2[:, None, :] / sp2**2
              + 4.0 * dot * outer11 / sp2**3)
        D2 = eye / sp2 - outer11 / sp2**2
        # (q, k, i, c) -> rows 3q + k, columns 3i + c
        curv = (np.einsum("qkc,qi->qkic", D1, self.B1)
                + np.einsum("qkc,qi->qkic", D2, self.B2))
        curv *= alpha1 * self._sqrt_w[:, None, None, None]
        J[self.blocks["curvature"]] = curv.reshape(3 * nq, 3 * n)

        t = cs.frame.tangent
        length = np.einsum("jq,qc,qi->jic", self._length_w, t, self.B1)
        J[self.blocks["length"]] = alpha2 * length.reshape(n - 1, 3 * n)
        return J

    def _data_jacobian(self, cs: CurveSamples) -> np.ndarray:
        dE = self.far_field_jacobian(cs)  # (D, 3 out, n, 3 coord)
        dE = dE * self._data_scale[:, None, None, None]
        D, n = dE.shape[0], self.n
        out = np.stack([dE.real, dE.imag], axis=2)  # (D, 3, 2, n, 3)
        return out.reshape(6 * D, 3 * n)

    def far_field_jacobian(self, cs: CurveSamples) -> np.ndarray:
        """``dE(y_d)_k / dx_{i,c}`` as a complex array of shape ``(D, 3, n, 3)``."""
        mat, wave = self.material, self.wave
        k = wave.k
        dirs = self.data.directions
        n, nq = self.n, self.quad.size
        diff = wave.theta[None, :] - dirs
        phase = np.exp(1j * k * (diff @ cs.points.T))
        w = self.quad.weights
        speed = cs.frame.speed
        t, nn, bb = cs.frame.tangent, cs.frame.normal, cs.frame.binormal
        eye = np.eye(3)
        total = np.zeros((dirs.shape[0], 3, n, 3), dtype=complex)
        branches = []
        if mat.mu_r != 1.0:
            branches.append(("mu", cs.M_mu, cs.c_mu, np.cross(wave.theta, wave.A), mat.mu_r))
        if mat.eps_r != 1.0:
            branches.append(("eps", cs.M_eps, cs.c_eps, wave.A, mat.eps_r))
        for name, Mq, c, vec, gamma_r in branches:
            a = speed[:, None] * (Mq @ vec)  # (Q, 3)
            # dM/dp' along each unit coordinate direction: (Q, c, 3, 3)
            dM = np.stack([
                tensor_shape_derivative(t, nn, bb, speed, c, np.broadcast_to(eye[col], t.shape))
                for col in range(3)
            ], axis=1)
            da = speed[:, None, None] * (dM @ vec) + t[:, :, None] * (Mq @ vec)[:, None, :]
            # term with the moving phase: (D, n, 3 comp)
            T1 = phase @ (w[:, None, None] * self.B0[:, :, None] * a[:, None, :]).reshape(nq, -1)
            T1 = T1.reshape(-1, n, 3)
            dS = 1j * k * T1[:, :, None, :] * diff[:, None, :, None]  # (D, n, c, comp)
            T2 = phase @ (w[:, None, None, None] * self.B1[:, :, None, None]
                          * da[:, None, :, :]).reshape(nq, -1)
            dS = dS + T2.reshape(-1, n, 3, 3)
            dS = np.moveaxis(dS, -1, 1)  # (D, comp, n, c)
            if name == "mu":
                contrib = -(gamma_r - 1.0) * np.einsum("dkl,dlic->dkic", _cross_matrix(dirs), dS)
            else:
                proj = eye[None] - dirs[:, :, None] * dirs[:, None, :]
                contrib = (gamma_r - 1.0) * np.einsum("dkl,dlic->dkic", proj, dS)
            total += contrib
        return (k * mat.rho) ** 2 * np.pi * total


def assemble_residual(spline: CurveSpline, material: Material, wave: PlaneWave,
                      data: FarFieldGrid, quad: QuadratureRule,
                      config: SolverConfig, jacobian: bool = True) -> ResidualSystem:
    model = ResidualModel(spline, material, wave, data, quad)
    return model.system(spline.coefficients, config.alpha1, config.alpha2, jacobian)


def _displacement(spline: CurveSpline, h, quad: QuadratureRule):
    """Values and first derivatives of a perturbation at the quadrature nodes."""
    if isinstance(h, CurveSpline):
        return h(quad.nodes, 0), h(quad.nodes, 1)
    h = np.asarray(h, dtype=float).reshape(spline.n, 3)
    part = spline.partition
    B0 = spline_basis_matrix(part, quad.nodes, 0, spline.closed)
    B1 = spline_basis_matrix(part, quad.nodes, 1, spline.closed)
    return B0 @ h, B1 @ h


def frechet_T(spline: CurveSpline, material: Material, wave: PlaneWave, grid,
              quad: QuadratureRule, h) -> np.ndarray:
    """Directional derivative of the far-field map along the perturbation ``h``.

    ``h`` is either a spline on the same partition or an ``(n, 3)`` array of
    control-point displacements. Sums the three terms of each branch: the
    phase variation, the tensor variation and the speed variation.
    """
    dirs = grid.directions if isinstance(grid, FarFieldGrid) else np.atleast_2d(grid)
    cs = sample_curve(spline, material, quad)
    hv, hd = _displacement(spline, h, quad)
    k = wave.k
    diff = wave.theta[None, :] - dirs
    phase = np.exp(1j * k * (diff @ cs.points.T))
    speed = cs.frame.speed
    t = cs.frame.tangent
    wq = quad.weights * speed
    dspeed = np.sum(cs.d1 * hd, axis=1) / speed
    out = np.zeros((dirs.shape[0], 3), dtype=complex)

    def branch(Mq, c, vec):
        Mv = Mq @ vec
        dM = tensor_shape_derivative(t, cs.frame.normal, cs.frame.binormal, speed, c, hd)
        t1 = (1j * k * (diff @ hv.T) * phase) @ (wq[:, None] * Mv)
        t2 = phase @ (wq[:, None] * (dM @ vec))
        t3 = phase @ ((quad.weights * dspeed)[:, None] * Mv)
        return t1 + t2 + t3

    if material.mu_r != 1.0:
        s = branch(cs.M_mu, cs.c_mu, np.cross(wave.theta, wave.A))
        out -= (material.mu_r - 1.0) * np.cross(dirs, s)
    if material.eps_r != 1.0:
        s = branch(cs.M_eps, cs.c_eps, wave.A)
        out += (material.eps_r - 1.0) * (s - np.sum(dirs * s, axis=1)[:, None] * dirs)
    return (k * material.rho) ** 2 * np.pi * out


def gauss_newton_step(system: ResidualSystem) -> np.ndarray:
    """Least-squares solution ``d`` of ``min |J d + P|``."""
    J, P = system.jacobian, system.residual
    if J is None:
        raise ValueError("residual system has no Jacobian")
    if not np.any(P):
        return np.zeros(J.shape[1])
    Q, R = np.linalg.qr(J)
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() > 1e-12 * diag.max():
        return -np.linalg.solve(R, Q.T @ P)
    scale = np.linalg.norm(J, 2) ** 2
    shift = 1e-10 * scale if scale > 0.0 else 1e-10
    warnings.warn("rank-deficient Jacobian; adding a Levenberg shift", RuntimeWarning, stacklevel=2)
    log.warning("rank-deficient Jacobian, Levenberg shift %.3g", shift)
    A = J.T @ J + shift * np.eye(J.shape[1])
    return -np.linalg.solve(A, J.T @ P)


def check_jacobian(model: ResidualModel, x, alpha1: float, alpha2: float,
                   step: float = 1e-6) -> dict:
    """Largest relative column error of the analytic Jacobian per block.

    Compares against central differences with step ``step`` times the
    coordinate scale of ``x``.
    """
    x = np.asarray(x, dtype=float)
    J = model.system(x, alpha1, alpha2).jacobian
    h = step * max(1.0, float(np.abs(x).max()))
    fd = np.empty_like(J)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[:, i] = (model.system(x + e, alpha1, alpha2, False).residual
                    - model.system(x - e, alpha1, alpha2, False).residual) / (2.0 * h)
    errors = {}
    for name, sl in model.blocks.items():
        scale = np.linalg.norm(fd[sl], axis=0)
        diff = np.linalg.norm(J[sl] - fd[sl], axis=0)
        # columns with no sensitivity at all must match to absolute zero-ish
        rel = np.where(scale > 0.0, diff / np.where(scale > 0.0, scale, 1.0), diff)
        errors[name] = float(rel.max()) if rel.size else 0.0
    return errors


def taylor_order(spline: CurveSpline, material: Material, wave: PlaneWave, grid,
                 quad: QuadratureRule, h, steps=(1e-2, 5e-3, 2.5e-3, 1.25e-3)) -> float:
    """Observed order of ``|T(p + e h) - T(p) - e T'(p) h|`` as ``e`` shrinks.

    A correct derivative gives 2; an incorrect one gives 1.
    """
    h = np.asarray(h, dtype=float).reshape(spline.n, 3)
    base = spline.coefficients.reshape(-1, 3)
    T0 = far_field(spline, material, wave, grid, quad)
    dT = frechet_T(spline, material, wave, grid, quad, h)
    rem = [np.linalg.norm(far_field(spline.with_points(base + e * h), material, wave, grid, quad)
                          - T0 - e * dT) for e in steps]
    return float(np.polyfit(np.log(steps), np.log(rem), 1)[0])


GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden(phi: Callable[[float], float], s_max: float, steps: int,
            phi0: Optional[float] = None, improvement: float = 1e-14):
    f0 = phi(0.0) if phi0 is None else phi0
    a, b = 0.0, s_max
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = phi(c), phi(d)
    evaluated = [(c, fc), (d, fd)]
    for i in range(steps):
        if fc <= fd:
            b, d, fd = d, c, fc
            if i < steps - 1:
                c = b - GOLDEN * (b - a)
                fc = phi(c)
                evaluated.append((c, fc))
        else:
            a, c, fc = c, d, fd
            if i < steps - 1:
                d = a + GOLDEN * (b - a)
                fd = phi(d)
                evaluated.append((d, fd))
    mid = 0.5 * (a + b)
    fmid = phi(mid)
    best_s, best_f = min(evaluated, key=lambda p: p[1])
    if fmid <= best_f:
        best_s, best_f = mid, fmid
    if not best_f < f0 - improvement * abs(f0):
        return 0.0, f0
    return best_s, best_f


def golden_section_search(phi: Callable[[float], float], s_max: float, steps: int = 10,
                          improvement: float = 1e-14) -> float:
    """Golden-section minimizer of ``phi`` on ``[0, s_max]`` after ``steps`` reductions.

    Returns the midpoint of the final bracket, or the best evaluated point if
    that is lower. Returns 0 when nothing beats ``phi(0)``.
    """
    return _golden(phi, s_max, steps, improvement=improvement)[0]


def _dominant(contributions: dict, total: float, threshold: float) -> str:
    if total > 0.0:
        for name in BLOCKS:
            if contributions[name] > threshold * total:
                return name
    # data wins ties
    return max(BLOCKS, key=lambda name: (contributions[name], -BLOCKS.index(name)))


@dataclass
class ReconstructionResult:
    spline: CurveSpline
    records: list = field(default_factory=list)

    @property
    def accepted_steps(self) -> int:
        return sum(r.event == "step" for r in self.records)


def reconstruct(initial: CurveSpline, material: Material, wave: PlaneWave,
                data: FarFieldGrid, quad: QuadratureRule,
                config: Optional[SolverConfig] = None, workers: int = 1,
                callback: Optional[Callable[[IterationRecord], None]] = None) -> ReconstructionResult:
    """Gauss-Newton iteration with golden-section line search and alpha halving.

    A zero step halves the regularization parameter of a dominating penalty
    block, or stops if the data block dominates.
    """
    config = config or SolverConfig()
    model = ResidualModel(initial, material, wave, data, quad, workers=workers)
    x = initial.coefficients
    a1, a2 = config.alpha1, config.alpha2
    records = []

    def phi(x_trial):
        try:
            return model.objective(x_trial, a1, a2)
        except IrregularCurveError:
            return math.inf

    if config.check_derivatives:
        errors = check_jacobian(model, x, a1, a2)
        log.info("derivative check: %s", errors)
        if max(errors.values()) > 1e-5:
            raise NumericalError(f"analytic Jacobian disagrees with finite differences: {errors}")

    for it in range(config.max_iterations):
        try:
            system = model.system(x, a1, a2)
        except IrregularCurveError as exc:
            raise IrregularCurveError(f"iteration {it}: current iterate is irregular ({exc})") from exc
        value = system.value
        contributions = system.contributions
        if initial.closed:
            # the last control point duplicates the first; solve for the rest
            free = ResidualSystem(system.residual, system.jacobian[:, :-3], system.blocks)
            direction = np.concatenate([gauss_newton_step(free), np.zeros(3)])
            direction[-3:] = direction[:3]
        else:
            direction = gauss_newton_step(system)
        if not np.all(np.isfinite(direction)):
            raise NumericalError(f"iteration {it}: non-finite search direction")
        step, new_value = _golden(lambda s: phi(x + s * direction), config.s_max,
                                  config.line_search_steps, value, config.improvement)
        if step > 0.0:
            x = x + step * direction
            event = "step"
        else:
            block = _dominant(contributions, value, config.dominance)
            if block == "curvature":
                a1 *= 0.5
                event = "halve_alpha1"
            elif block == "length":
                a2 *= 0.5
                event = "halve_alpha2"
            else:
                event = "stop"
        record = IterationRecord(it, x.reshape(-1, 3).copy(), value, contributions,
                                 step, a1, a2, event)
        records.append(record)
        log.info("iter %d  phi %.6e  step %.4g  %s", it, value, step, event)
        if callback is not None:
            callback(record)
        if event == "stop":
            break
    return ReconstructionResult(model.spline(x), records)


def add_noise(grid: FarFieldGrid, level: float, seed: Optional[int] = None) -> FarFieldGrid:
    """Add complex uniform noise with expected relative discrete norm ``level``.

    Each component receives ``sigma (u1 + i u2) / sqrt(2/3)`` with ``u1, u2``
    uniform on [-1, 1] and ``sigma = level ||E|| / sqrt(3 sum w)``.
    """
    if level < 0.0:
        raise ValueError("noise level must be nonnegative")
    if grid.samples is None:
        raise ValueError("grid carries no samples")
    if level == 0.0:
        return grid.with_samples(grid.samples.copy())
    rng = np.random.default_rng(seed)
    sigma = level * sphere_norm(grid) / math.sqrt(3.0 * grid.weights.sum())
    u = rng.uniform(-1.0, 1.0, size=grid.samples.shape + (2,))
    noise = sigma * (u[..., 0] + 1j * u[..., 1]) / math.sqrt(2.0 / 3.0)
    return grid.with_samples(grid.samples + noise)
