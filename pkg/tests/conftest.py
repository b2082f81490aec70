import numpy as np
import pytest

from thintube.forward import FarFieldGrid, QuadratureRule, default_wave, far_field
from thintube.geometry import Partition, helix_curve, named_spline, spline_fit
from thintube.polarization import Material


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def torus_material():
    return Material(2.5, 1.6, 0.03)


@pytest.fixture
def helix_material():
    return Material(2.1, 1.0, 0.03)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def perturbed_helix(rng, n=8, scale=0.2):
    part = Partition.uniform(n)
    return spline_fit(part, helix_curve(part.knots) + scale * rng.standard_normal((n, 3)))


def small_problem(rng, material, n=8, N=4, M=5):
    """A perturbed helix, its quadrature, and far-field data from another curve."""
    spline = perturbed_helix(rng, n)
    quad = QuadratureRule.for_spline(spline, M)
    wave = default_wave(material)
    grid = FarFieldGrid(N)
    data = grid.with_samples(far_field(named_spline("helix", n), material, wave, grid, quad))
    return spline, quad, wave, data
