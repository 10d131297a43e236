import numpy as np
from hypothesis import given, settings, strategies as st

from hfhbloch import BlochProblem, Inclusion, MediumSpec, PhysicsMode, PlaneWaveBasis
from hfhbloch import effmed
from hfhbloch.medium import fourier_coefficients

SETTINGS = settings(max_examples=15, deadline=None)
radius = st.floats(0.1, 0.9)
eps = st.floats(1.0, 15.0)
kcomp = st.floats(-np.pi / 2, np.pi / 2)
kinds = st.sampled_from(["scalar_h3", "scalar_e3", "quasi2d"])

OPS = [lambda k: -k, lambda k: k[::-1], lambda k: np.array([-k[1], k[0]]), lambda k: np.array([k[0], -k[1]])]


def _problem(r, e, kind, beta=1.2, cutoff=4):
    med = MediumSpec(e, (Inclusion("disk", r, 1.0 + 0.5 * e),), 2)
    mode = PhysicsMode.quasi2d(beta) if kind == "quasi2d" else PhysicsMode(kind)
    return BlochProblem(med, mode, PlaneWaveBasis(2, cutoff))


@SETTINGS
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), radius.filter(lambda r: r < 0.45), eps)
def test_fourier_conjugate_symmetry(cx, cy, r, e):
    med = MediumSpec(1.0, (Inclusion("disk", r, e, (cx, cy)),), 2)
    G = np.pi * np.array([[1, 2], [-3, 1], [2, 2]], float)
    assert np.allclose(fourier_coefficients(med, "eps", G), np.conj(fourier_coefficients(med, "eps", -G)))


@SETTINGS
@given(radius, eps, kcomp, kcomp, kinds)
def test_point_group_invariance(r, e, k1, k2, kind):
    pr = _problem(r, e, kind)
    K = np.array([k1, k2])
    ref = pr.solve(K, 4).omegas
    for op in OPS:
        assert np.allclose(pr.solve(op(K), 4).omegas, ref, rtol=1e-9, atol=1e-12)


@SETTINGS
@given(radius, eps, kcomp, kcomp, kinds)
def test_hermitian_and_nonnegative(r, e, k1, k2, kind):
    pr = _problem(r, e, kind)
    pair = pr.assemble([k1, k2])
    assert np.linalg.norm(pair.A - pair.A.conj().T) <= 1e-12 * np.linalg.norm(pair.A)
    assert np.all(pr.solve([k1, k2], 3).omegas >= 0)


@SETTINGS
@given(radius, eps, st.sampled_from(["scalar_h3", "scalar_e3"]))
def test_wiener_bounds(r, e, kind):
    pr = _problem(r, e, kind, cutoff=5)
    eff = effmed.low_frequency_tensor(pr)
    assert effmed.wiener_bounds(eff, pr.medium)["holds"]


@SETTINGS
@given(st.floats(0.05, 3.0), st.floats(0.5, 3.0), st.floats(0.0, 0.2), st.floats(0.0, 0.2))
def test_decay_monotone(t, w0, d1, d2):
    lo, hi = sorted((d1, d2))
    a = effmed.decay_rate(np.diag([t, 1.0]), w0, w0 - lo * w0 / 2).alpha
    b = effmed.decay_rate(np.diag([t, 1.0]), w0, w0 - hi * w0 / 2).alpha
    assert b >= a >= 0
