import itertools

import numpy as np
import pytest

from hfhbloch import BlochProblem, Inclusion, MediumSpec, PhysicsMode, PlaneWaveBasis, homogeneous
from hfhbloch.bloch import (AssemblyError, EigenSolverError, band_structure, read_band_csv, solve,
                            transverse_frames, write_band_csv)
from hfhbloch.lattice import LatticeSpec, ibz_path


def free_bands(K, n, index=1.0, span=6):
    """Sorted |K+G|/index over a generous set of reciprocal vectors."""
    G = np.pi * np.array(list(itertools.product(range(-span, span + 1), repeat=len(K))))
    return np.sort(np.linalg.norm(np.asarray(K) + G, axis=1))[:n] / index


def test_empty_gamma_lowest_five(empty_h3):
    assert np.allclose(empty_h3.solve([0, 0], 5).omegas, [0, np.pi, np.pi, np.pi, np.pi], atol=1e-12)


def test_empty_x_doublet(empty_h3):
    assert np.allclose(empty_h3.solve([np.pi / 2, 0], 2).omegas, np.pi / 2, atol=1e-12)


@pytest.mark.parametrize("kind", ["scalar_h3", "scalar_e3"])
def test_homogeneous_index_two(kind):
    pr = BlochProblem(homogeneous(4.0), PhysicsMode(kind), PlaneWaveBasis(2, 5))
    K = [0.37, -0.81]
    assert np.allclose(pr.solve(K, 8).omegas, free_bands(K, 8, 2.0), atol=1e-12)


def test_homogeneous_vector3d_doubled():
    pr = BlochProblem(homogeneous(4.0, 3), PhysicsMode.vector3d(), PlaneWaveBasis(3, 3))
    K = [0.3, 0.2, 0.1]
    expect = np.repeat(free_bands(K, 4, 2.0), 2)
    assert np.allclose(pr.solve(K, 8).omegas, expect, atol=1e-12)


def test_quasi2d_homogeneous_beta():
    pr = BlochProblem(homogeneous(2.0), PhysicsMode.quasi2d(1.5), PlaneWaveBasis(2, 4))
    K = np.array([0.4, 0.1])
    kz = np.sqrt(free_bands(K, 3) ** 2 + 1.5**2) / np.sqrt(2.0)
    assert np.allclose(pr.solve(K, 6).omegas, np.repeat(kz, 2), atol=1e-12)


def test_quasi2d_beta0_is_union_of_polarisations(pcf_medium):
    K = [0.3, 0.7]
    q = BlochProblem(pcf_medium, PhysicsMode.quasi2d(0.0), PlaneWaveBasis(2, 6), "inverse").solve(K, 8).omegas
    h = BlochProblem(pcf_medium, PhysicsMode.scalar_h3(), PlaneWaveBasis(2, 6), "inverse").solve(K, 8).omegas
    e = BlochProblem(pcf_medium, PhysicsMode.scalar_e3(), PlaneWaveBasis(2, 6), "inverse").solve(K, 8).omegas
    assert np.allclose(q, np.sort(np.r_[h, e])[:8], atol=1e-10)


def test_vector3d_fields_transverse():
    med = MediumSpec(1.0, (Inclusion("sphere", 0.6, 8.0),), 3)
    pr = BlochProblem(med, PhysicsMode.vector3d(), PlaneWaveBasis(3, 2))
    K = [0.4, 0.2, 0.1]
    sol = pr.solve(K, 4)
    f = sol.fields()
    k = pr.kvecs(K)
    assert np.max(np.abs(np.einsum("gc,gcb->gb", k, f))) < 1e-13


def test_frames_orthonormal():
    k = np.array([[0.0, 0, 0], [1.0, 2, 3], [0, 0, -2.0], [1e-3, 5, 0]])
    fr = transverse_frames(k)
    for f in fr:
        assert np.allclose(f @ f.T, np.eye(3))
    assert np.allclose(fr[1:, 2], k[1:] / np.linalg.norm(k[1:], axis=1)[:, None])


def test_factorisations_converge_to_same_band(pcf_medium):
    K = [np.pi / 2, 0]
    d = BlochProblem(pcf_medium, PhysicsMode.scalar_h3(), PlaneWaveBasis(2, 16), "direct").solve(K, 3).omegas
    i = BlochProblem(pcf_medium, PhysicsMode.scalar_h3(), PlaneWaveBasis(2, 16), "inverse").solve(K, 3).omegas
    assert np.allclose(d, i, rtol=2e-2)


def test_monotone_convergence_empty():
    K = [0.21, 0.55]
    prev = None
    for n in (2, 3, 4, 6):
        om = BlochProblem(homogeneous(1.0), PhysicsMode.scalar_h3(), PlaneWaveBasis(2, n)).solve(K, 5).omegas
        if prev is not None:
            assert np.all(om <= prev + 1e-8)
        prev = om


def test_hermitian_assembly(pcf_small):
    pair = pcf_small.assemble([0.3, 1.1])
    assert np.linalg.norm(pair.A - pair.A.conj().T) <= 1e-12 * np.linalg.norm(pair.A)


def test_band_structure_shape_and_order(pcf_small):
    path = ibz_path(LatticeSpec(2), 4)
    om = band_structure(path.points, pcf_small, 5)
    assert om.shape == (len(path.points), 5)
    assert np.all(np.diff(om, axis=1) >= 0)
    assert np.allclose(band_structure(path.points, pcf_small, 5, workers=3), om)


def test_empty_gamma_x_lowest_band_linear():
    pr = BlochProblem(homogeneous(1.0), PhysicsMode.scalar_h3(), PlaneWaveBasis(2, 3))
    K = np.c_[np.linspace(0, np.pi / 2, 6), np.zeros(6)]
    assert np.allclose(band_structure(K, pr, 1)[:, 0], K[:, 0], atol=1e-12)


def test_pcf_partial_gap(pcf_problem):
    path = ibz_path(LatticeSpec(2), 6)
    om = band_structure(path.points, pcf_problem, 5)
    assert om[:, 1].max() < om[:, 2].min()


def test_csv_roundtrip(tmp_path, empty_h3):
    path = ibz_path(LatticeSpec(2), 3)
    om = band_structure(path.points, empty_h3, 2)
    f = tmp_path / "b.csv"
    write_band_csv(f, path, om)
    rows = read_band_csv(f)
    assert list(rows[0]) == ["segment", "index", "K1", "K2", "band", "omega"]
    assert len(rows) == len(path.points) * 2
    assert float(rows[3]["omega"]) == pytest.approx(om[1, 1], rel=1e-8)


def test_errors(empty_h3):
    with pytest.raises(AssemblyError):
        PlaneWaveBasis(2, 0)
    with pytest.raises(ValueError):
        empty_h3.solve([0.1, 0.2], 10_000)
    with pytest.raises(ValueError):
        empty_h3.solve([0.1, 0.2, 0.3], 2)
    with pytest.raises(ValueError):
        PhysicsMode("tm")
    with pytest.raises(ValueError):
        PhysicsMode("scalar_h3", 1.0)
    with pytest.raises(ValueError):
        BlochProblem(homogeneous(1.0), PhysicsMode.vector3d())


def test_negative_spectrum_rejected(empty_h3):
    pair = empty_h3.assemble([0.1, 0.2])
    pair.A = -pair.A
    with pytest.raises(EigenSolverError):
        solve(pair, 2)


def test_centred_basis_symmetric_wavevectors():
    basis = PlaneWaveBasis(2, 3).centred_for([np.pi / 2, 0])
    k = basis.G + np.array([np.pi / 2, 0])
    assert np.allclose(np.sort(k[:, 0]), np.sort(-k[:, 0]))
    assert basis.size == 8 * 7
    with pytest.raises(ValueError):
        basis.negation_map()


def test_centring_restores_zero_group_velocity(pcf_small):
    from hfhbloch.bloch import fd_band_derivatives
    X = [np.pi / 2, 0]
    fd = fd_band_derivatives(pcf_small.centred_at(X), X, [2])
    assert np.max(np.abs(fd.gradient)) < 1e-8
