import numpy as np
import pytest
from scipy import integrate

from hfhbloch.medium import Inclusion, MediumSpec, filling_fraction, fourier_coefficient, homogeneous


def _disk_quadrature(G, r, center=(0.0, 0.0)):
    """Cell average of exp(-i G.x) over a disk by polar quadrature (oracle)."""
    def part(fn):
        val, _ = integrate.dblquad(
            lambda rho, th: fn(G[0] * (center[0] + rho * np.cos(th)) + G[1] * (center[1] + rho * np.sin(th))) * rho,
            0, 2 * np.pi, 0, r, epsabs=1e-12, epsrel=1e-12)
        return val
    return (part(np.cos) - 1j * part(np.sin)) / 4.0


@pytest.mark.parametrize("m", [(0, 0), (1, 0), (1, 1), (2, -1), (3, 2)])
def test_disk_coefficients_match_quadrature(m):
    med = MediumSpec(6.0, (Inclusion("disk", 0.75, 1.0),), 2)
    G = np.pi * np.asarray(m, float)
    analytic = fourier_coefficient(med, "eps", G)
    oracle = 6.0 * (np.allclose(G, 0)) + (1.0 - 6.0) * _disk_quadrature(G, 0.75)
    assert abs(analytic - oracle) < 1e-9


def test_offcentre_disk_phase():
    med = MediumSpec(1.0, (Inclusion("disk", 0.3, 3.0, (0.4, -0.2)),), 2)
    G = np.pi * np.array([1.0, 2.0])
    oracle = 2.0 * _disk_quadrature(G, 0.3, (0.4, -0.2))
    assert abs(fourier_coefficient(med, "eps", G) - oracle) < 1e-9


def test_sphere_coefficient_mean_and_limit():
    med = MediumSpec(1.0, (Inclusion("sphere", 0.6, 8.0),), 3)
    f = filling_fraction(med)
    assert np.isclose(f, 4 / 3 * np.pi * 0.216 / 8)
    assert np.isclose(fourier_coefficient(med, "eps", np.zeros(3)).real, 1 + 7 * f)
    assert np.isclose(fourier_coefficient(med, "inv_eps", np.zeros(3)).real, 1 + (1 / 8 - 1) * f)


def test_sphere_coefficient_quadrature():
    r, G = 0.6, np.pi * np.array([1.0, 1.0, 0.0])
    g = np.linalg.norm(G)
    radial, _ = integrate.quad(lambda s: 4 * np.pi * s**2 * np.sinc(g * s / np.pi), 0, r, epsabs=1e-13)
    med = MediumSpec(1.0, (Inclusion("sphere", r, 8.0),), 3)
    assert abs(fourier_coefficient(med, "eps", G) - 7.0 * radial / 8.0) < 1e-10


def test_homogeneous_coefficients():
    med = homogeneous(4.0)
    assert fourier_coefficient(med, "inv_eps", [0, 0]) == 0.25
    assert fourier_coefficient(med, "eps", [np.pi, 0]) == 0
    assert fourier_coefficient(med, "mu", [0, 0]) == 1.0


def test_off_lattice_vector_rejected():
    with pytest.raises(ValueError):
        fourier_coefficient(homogeneous(2.0), "eps", [0.5, 0.0])


def test_unknown_role_rejected():
    with pytest.raises(ValueError):
        fourier_coefficient(homogeneous(2.0), "sigma", [0.0, 0.0])


def test_validation():
    with pytest.raises(ValueError):
        MediumSpec(-1.0)
    with pytest.raises(ValueError):
        MediumSpec(1.0, (Inclusion("disk", 1.2, 2.0),), 2)
    with pytest.raises(ValueError):
        MediumSpec(1.0, (Inclusion("disk", 0.4, 2.0, (0.3, 0)), Inclusion("disk", 0.4, 2.0, (-0.3, 0))), 2)
    with pytest.raises(ValueError):
        MediumSpec(1.0, (Inclusion("sphere", 0.4, 2.0),), 2)
    with pytest.raises(ValueError):
        Inclusion("cube", 0.4, 2.0)


def test_supercell_geometry():
    med = MediumSpec(1.0, (Inclusion("sphere", 0.8, 20.0),), 3, supercell_height=6)
    assert np.allclose(med.half_extent, [1, 1, 6])
    assert np.isclose(med.cell_volume, 2 * 2 * 12)
    assert np.allclose(med.reciprocal_spacing(), [np.pi, np.pi, np.pi / 6])
    fourier_coefficient(med, "eps", [0, 0, np.pi / 6])
    with pytest.raises(ValueError):
        fourier_coefficient(med, "eps", [0, 0, np.pi / 5])


def test_eps_at_points():
    med = MediumSpec(6.0, (Inclusion("disk", 0.75, 1.0),), 2)
    assert np.allclose(med.eps_at(np.array([[0, 0], [0.9, 0.9]])), [1.0, 6.0])
