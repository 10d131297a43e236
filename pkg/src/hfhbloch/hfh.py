"""High-frequency homogenisation about Brillouin-zone standing waves.

Given the standing-wave modes ``h0`` at a zone vertex with frequency
``omega0`` this module builds the long-scale description of the nearby
dispersion surface:

* ``Q``, the Gram matrix of the modes, and ``P_j``, whose off-diagonal
  entries couple degenerate modes at first order;
* the first-order cell fields ``h1`` (one per mode and long-scale direction);
* the second-order tensors ``T_ij`` of the effective equation
  ``T_ij d2f/dX_i dX_j + Omega_2^2 f = 0`` and their decoupled form;
* linear (Dirac-like) branches when ``P`` does not vanish.

All cell integrals are cell averages evaluated as Fourier coefficient sums.
With ``kappa = (k - k0) l`` the asymptotic bands are
``Omega = Omega0 + T_ij kappa_i kappa_j / (2 Omega0)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .bloch import BlochProblem, BlochSolution, CompatibilityError, PhysicsMode

ESSENTIAL = "essential"
DIRAC = "dirac"


class ClusterTruncatedError(RuntimeError):
    pass


class ClassificationError(RuntimeError):
    pass


@dataclass
class StandingWaveGroup:
    problem: BlochProblem
    K: np.ndarray
    omega0: float
    band_indices: list
    modes: np.ndarray  # (p, *field_shape)

    @property
    def p(self) -> int:
        return len(self.modes)

    @property
    def columns(self) -> np.ndarray:
        """Modes stacked along a trailing axis, as the solvers expect."""
        return np.moveaxis(self.modes, 0, -1)

    def gram(self) -> np.ndarray:
        pr = self.problem
        return np.array([[pr.b_inner(a, b) for b in self.modes] for a in self.modes])


def _gram_schmidt(problem: BlochProblem, vecs: list) -> np.ndarray:
    out = []
    for v in vecs:
        w = v.copy()
        for _ in range(2):
            for u in out:
                w = w - u * problem.b_inner(u, w)
        w = w / np.sqrt(problem.b_inner(w, w).real)
        out.append(w)
    return np.array(out)


def _standing_basis(problem: BlochProblem, K, modes: np.ndarray) -> np.ndarray:
    """Re-pick a degenerate set as standing waves, i.e. fixed by time reversal.

    Standing waves carry no flux, so their P^{nn} vanish.  Candidates
    ``m + Tm`` and ``i(m - Tm)`` are invariant; a real orthonormal frame of
    their span is kept.  The input is returned unchanged when the span is
    not closed under the symmetry.
    """
    try:
        rev = [problem.time_reversal(K, m) for m in modes]
    except ValueError:
        return modes
    cands = [m + r for m, r in zip(modes, rev)] + [1j * (m - r) for m, r in zip(modes, rev)]
    gram = np.array([[problem.b_inner(a, b).real for b in cands] for a in cands])
    w, v = np.linalg.eigh(gram)
    p = len(modes)
    if w[-p] < 1e-6 * w[-1]:
        return modes
    out = []
    for c in v[:, ::-1][:, :p].T:
        out.append(sum(ci * x for ci, x in zip(c, cands)))
    out = _gram_schmidt(problem, out)
    # the invariant frame must span the original eigenspace
    proj = np.array([[problem.b_inner(a, b) for b in out] for a in modes])
    if np.linalg.norm(proj.conj().T @ proj - np.eye(p)) > 1e-8:
        return modes
    return out


def locate_group(solution: BlochSolution, band_index: int, cluster_tol: float = 1e-4) -> StandingWaveGroup:
    """Maximal cluster of eigenvalues around ``band_index`` (0-based)."""
    om = solution.omegas
    ref = om[band_index]
    tol = cluster_tol * max(ref, 1.0)
    members = [i for i in range(len(om)) if abs(om[i] - ref) <= tol]
    if members[-1] == len(om) - 1:
        raise ClusterTruncatedError(
            f"cluster around band {band_index} reaches the last computed band; request more bands")
    fields = solution.fields(members)
    vecs = [np.take(fields, i, axis=-1) for i in range(len(members))]
    modes = _gram_schmidt(solution.problem, vecs)
    modes = _standing_basis(solution.problem, solution.K, modes)
    omega0 = float(np.mean(om[members]))
    return StandingWaveGroup(solution.problem, np.asarray(solution.K, float), omega0, members, modes)


def _eta(problem, f):
    """Apply the stiffness coefficient to a scalar or vector field."""
    return problem.stiffness @ f


def _grad(k: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Fourier gradient; for vector f the result is indexed [G, derivative, component]."""
    if f.ndim == 1:
        return 1j * k * f[:, None]
    return 1j * k[:, :, None] * f[:, None, :]


def compute_P(group: StandingWaveGroup) -> np.ndarray:
    """Flux matrices P[j, n, r]; anti-Hermitian in (n, r)."""
    pr = group.problem
    if group.omega0 == 0.0:
        raise ValueError("P is undefined at zero frequency; use the quasi-static homogeniser")
    k = pr.kvecs(group.K)
    d = pr.n_bloch
    p = group.p
    P = np.zeros((d, p, p), dtype=complex)
    if pr.mode.is_vector:
        # e0 from  eps^-1 curl h0 = -i omega0 e0
        e0 = [-(1.0 / group.omega0) * _eta(pr, np.cross(k, h)) for h in group.modes]
        for n in range(p):
            for r in range(p):
                flux = (np.cross(e0[n].conj(), group.modes[r]) + np.cross(e0[r], group.modes[n].conj())).sum(axis=0)
                P[:, n, r] = 1j * group.omega0 * flux[:d]
    else:
        a_modes = [_eta(pr, h) for h in group.modes]
        for j in range(d):
            for n in range(p):
                for r in range(p):
                    hn, hr = group.modes[n], group.modes[r]
                    P[j, n, r] = (np.vdot(hn, _eta(pr, 1j * k[:, j] * hr))
                                  - np.vdot(1j * k[:, j] * hn, a_modes[r]))
    return P


def classify(P: np.ndarray, omega0: float, tol: float = 1e-3) -> str:
    if P.shape[-1] == 1:
        return ESSENTIAL
    norm = max(np.linalg.norm(P[j], 2) for j in range(len(P)))
    return ESSENTIAL if norm <= tol * omega0 else DIRAC


@dataclass
class FirstOrderField:
    h1: np.ndarray  # (d, p, *field_shape): h1[j][r]
    compatibility: float
    gauge: float


def solve_first_order(group: StandingWaveGroup, classification: str = ESSENTIAL,
                      compat_tol: float = 1e-6) -> FirstOrderField:
    """Cell fields driven by long-scale derivatives of each mode.

    Solves ``(A(K0) - omega0^2 B) h1[j][r] = i A1_j h0[r]``.  For Dirac groups
    the null-space part of the right side is the first-order coupling itself
    and is projected out without being treated as an error.
    """
    pr = group.problem
    d = pr.n_bloch
    rhs = np.stack([1j * pr.apply_A1(group.K, j, h) for j in range(d) for h in group.modes], axis=-1)
    tol = np.inf if classification == DIRAC else compat_tol
    try:
        x, compat = pr.deflated_solve(group.K, group.omega0**2, rhs, group.columns, check_compat=tol)
    except CompatibilityError as exc:
        raise CompatibilityError(exc.residual) from None
    h1 = np.moveaxis(x, -1, 0).reshape((d, group.p) + group.modes.shape[1:])
    gauge = max(abs(pr.b_inner(h0, y)) for h0 in group.modes for y in h1.reshape((-1,) + h1.shape[2:]))
    return FirstOrderField(h1, compat, float(gauge))


def _t_hat_vector(problem, K, modes, h1) -> np.ndarray:
    """Unsymmetrised cell integral T_hat[i, j, n, r] for vector fields."""
    k = problem.kvecs(K)
    d = h1.shape[0]
    p = len(modes)
    nG = problem.basis.size
    eta_modes = [_eta(problem, h) for h in modes]
    grad_modes = [_grad(k, h) for h in modes]
    T = np.zeros((d, d, p, p), dtype=complex)
    for j in range(d):
        for r in range(p):
            y = h1[j, r]
            ey = _eta(problem, y)
            egy = _eta(problem, _grad(k, y).reshape(nG, 9)).reshape(nG, 3, 3)
            for n in range(p):
                x = modes[n]
                gx = grad_modes[n]
                for i in range(d):
                    t = (i == j) * np.vdot(x, eta_modes[r]) - np.vdot(x[:, j], eta_modes[r][:, i])
                    for c in range(3):
                        t += np.vdot(gx[:, c, i], ey[:, c])
                        t -= np.vdot(gx[:, i, c], ey[:, c])
                        t += np.vdot(x[:, c], egy[:, i, c])
                        t -= np.vdot(x[:, c], egy[:, c, i])
                    T[i, j, n, r] = t
    return T


def _t_hat_scalar(problem, K, modes, h1) -> np.ndarray:
    k = problem.kvecs(K)
    d = h1.shape[0]
    p = len(modes)
    T = np.zeros((d, d, p, p), dtype=complex)
    for n in range(p):
        x = modes[n]
        for r in range(p):
            ax = _eta(problem, modes[r])
            for j in range(d):
                y = h1[j, r]
                ay = _eta(problem, y)
                for i in range(d):
                    T[i, j, n, r] = ((i == j) * np.vdot(x, ax)
                                     + np.vdot(x, _eta(problem, 1j * k[:, i] * y))
                                     - np.vdot(1j * k[:, i] * x, ay))
    return T


def t_hat_raw(problem: BlochProblem, K, modes: np.ndarray, h1: np.ndarray) -> np.ndarray:
    if problem.mode.is_vector:
        return _t_hat_vector(problem, K, modes, h1)
    return _t_hat_scalar(problem, K, modes, h1)


def t_hat_perturbative(problem: BlochProblem, K, modes: np.ndarray, h1: np.ndarray) -> np.ndarray:
    """Same tensor from second-order perturbation of A(K0 + kappa).

    Independent of the cell-integral assembly; only the (i, j)-symmetric
    part agrees with it.
    """
    d = h1.shape[0]
    p = len(modes)
    T = np.zeros((d, d, p, p), dtype=complex)
    for i in range(d):
        for j in range(d):
            for n in range(p):
                for r in range(p):
                    T[i, j, n, r] = (np.vdot(modes[n], problem.apply_A2(i, j, modes[r]))
                                     + 1j * np.vdot(modes[n], problem.apply_A1(K, i, h1[j, r])))
    return T


@dataclass
class HfhTensors:
    K: np.ndarray
    omega0: float
    p: int
    classification: str
    Q: np.ndarray
    P: np.ndarray
    T_hat: np.ndarray = None
    T: np.ndarray = None
    T_raw: np.ndarray = None
    M: np.ndarray = None
    T_tilde: np.ndarray = None  # (p, d, d): quadratic form per decoupled branch
    decoupling_residual: float = np.nan
    decoupled: bool = False
    compatibility: float = np.nan
    gauge: float = np.nan
    C: np.ndarray = None
    D: np.ndarray = None
    band_indices: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.P.shape[0]

    def quadratic_matrix(self, kappa) -> np.ndarray:
        """Mode-space matrix sum_ij T_ij kappa_i kappa_j."""
        kappa = np.asarray(kappa, float)
        return np.einsum("i,j,ijnr->nr", kappa, kappa, self.T)


def _symmetrise_ij(T):
    return 0.5 * (T + np.swapaxes(T, 0, 1))


def decouple(T: np.ndarray, seed: int = 0, tol: float = 1e-6):
    """Shared eigenvectors of the mode matrices T_ij.

    A generic random combination of the T_ij is diagonalised; the residual
    is the largest off-diagonal entry left in any transformed T_ij,
    relative to the largest entry of T.
    """
    d, p = T.shape[0], T.shape[2]
    if p == 1:
        return np.eye(1), T[:, :, 0, 0].real[None], 0.0
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((d, d))
    S = np.einsum("ij,ijnr->nr", c + c.T, T)
    S = 0.5 * (S + S.conj().T)
    _, M = np.linalg.eigh(S)
    Tt = np.einsum("nq,ijqs,sr->ijnr", M.conj().T, T, M)
    off = Tt.copy()
    for b in range(p):
        off[:, :, b, b] = 0.0
    scale = max(np.max(np.abs(T)), 1e-300)
    residual = float(np.max(np.abs(off)) / scale)
    branches = np.stack([Tt[:, :, b, b].real for b in range(p)])
    return M, branches, residual


def compute_T(group: StandingWaveGroup, first: FirstOrderField, seed: int = 0,
              decoupling_tol: float = 1e-6):
    Q = group.gram()
    Th_raw = t_hat_raw(group.problem, group.K, group.modes, first.h1)
    Qinv = np.linalg.inv(Q)
    T_raw = np.einsum("nq,ijqr->ijnr", Qinv, Th_raw)
    T_hat = _symmetrise_ij(Th_raw)
    T = _symmetrise_ij(T_raw)
    M, branches, residual = decouple(T, seed, decoupling_tol)
    return T_hat, T, T_raw, M, branches, residual


@dataclass
class DiracBranches:
    direction: np.ndarray
    slopes: np.ndarray
    vectors: np.ndarray
    quadratic_fallback: np.ndarray
    D: np.ndarray


def dirac_dispersion(group_or_tensors, P: np.ndarray = None, Q: np.ndarray = None, direction=None,
                     zero_tol: float = 1e-3) -> DiracBranches:
    """Linear branch slopes dOmega/d|kappa| along ``direction``.

    ``Omega_1^2`` values are the eigenvalues of ``-i C_j u_j`` with
    ``C_j = Q^-1 P_j``; slopes are those divided by ``2 Omega0``.  Zero
    eigenvalues are flagged for the quadratic fallback.
    """
    if isinstance(group_or_tensors, HfhTensors):
        t = group_or_tensors
        omega0, P, Q = t.omega0, t.P, t.Q
        classification = t.classification
    else:
        omega0 = group_or_tensors.omega0
        classification = classify(P, omega0)
    if classification != DIRAC:
        raise ClassificationError("linear branches only exist at a Dirac-like point")
    u = np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    C = np.einsum("nq,jqr->jnr", np.linalg.inv(Q), P)
    D = -np.einsum("jnq,iqr->ijnr", C, C)
    L = -1j * np.einsum("j,jnr->nr", u, C)
    L = 0.5 * (L + L.conj().T)
    lam, vec = np.linalg.eigh(L)
    slopes = lam / (2.0 * omega0)
    flat = np.abs(lam) <= zero_tol * max(np.max(np.abs(lam)), omega0 * 1e-12)
    slopes[flat] = 0.0
    return DiracBranches(u, slopes, vec, flat, D)


def analyse_group(group: StandingWaveGroup, p_tol: float = 1e-3, seed: int = 0,
                  decoupling_tol: float = 1e-6, compat_tol: float = 1e-6) -> HfhTensors:
    """Full tensor pipeline for one standing-wave group."""
    Q = group.gram()
    P = compute_P(group)
    cls = classify(P, group.omega0, p_tol)
    out = HfhTensors(group.K, group.omega0, group.p, cls, Q, P, band_indices=list(group.band_indices))
    first = solve_first_order(group, cls, compat_tol)
    T_hat, T, T_raw, M, branches, residual = compute_T(group, first, seed, decoupling_tol)
    out.T_hat, out.T, out.T_raw = T_hat, T, T_raw
    out.M, out.T_tilde, out.decoupling_residual = M, branches, residual
    out.decoupled = residual <= decoupling_tol
    out.compatibility, out.gauge = first.compatibility, first.gauge
    if cls == DIRAC:
        out.C = np.einsum("nq,jqr->jnr", np.linalg.inv(Q), P)
        out.D = -np.einsum("jnq,iqr->ijnr", out.C, out.C)
    return out


def analyse_vertex(problem: BlochProblem, K, band_index: int, n_bands: int | None = None,
                   cluster_tol: float = 1e-4, **kwargs) -> HfhTensors:
    n = n_bands if n_bands is not None else band_index + 4
    sol = problem.centred_at(K).solve(K, n)
    return analyse_group(locate_group(sol, band_index, cluster_tol), **kwargs)


def asymptotic_band(tensors: HfhTensors, kappa) -> np.ndarray:
    """Asymptotic frequencies of every branch at offset ``kappa``, ascending."""
    kappa = np.asarray(kappa, float)
    w0 = tensors.omega0
    norm = np.linalg.norm(kappa)
    if norm == 0.0:
        return np.full(tensors.p, w0)
    if tensors.classification == DIRAC:
        br = dirac_dispersion(tensors, direction=kappa)
        W = tensors.quadratic_matrix(kappa)
        out = w0 + br.slopes * norm
        for b in np.flatnonzero(br.quadratic_fallback):
            v = br.vectors[:, b]
            out[b] = w0 + np.real(np.vdot(v, W @ v)) / (2.0 * w0)
        return np.sort(out)
    if tensors.decoupled:
        vals = np.einsum("i,bij,j->b", kappa, tensors.T_tilde, kappa)
    else:
        W = tensors.quadratic_matrix(kappa)
        vals = np.linalg.eigvalsh(0.5 * (W + W.conj().T))
    return np.sort(w0 + vals / (2.0 * w0))


def with_parameter(problem: BlochProblem, parameter: str, value: float) -> BlochProblem:
    """Copy of ``problem`` with beta_l, the first inclusion radius or its eps replaced."""
    from dataclasses import replace

    medium, mode = problem.medium, problem.mode
    if parameter == "beta_l":
        mode = PhysicsMode.quasi2d(value)
    elif parameter in ("radius", "eps"):
        if not medium.inclusions:
            raise ValueError(f"cannot tune {parameter}: the medium has no inclusions")
        first = replace(medium.inclusions[0], **{parameter: value})
        medium = replace(medium, inclusions=(first,) + medium.inclusions[1:])
    else:
        raise ValueError(f"unknown tuning parameter {parameter!r}")
    return BlochProblem(medium, mode, problem.basis, problem.factorization)


@dataclass
class TuningResult:
    parameter: str
    value: float
    gap: float
    omega0: float
    success: bool
    trace: list


def find_accidental_degeneracy(problem: BlochProblem, parameter: str, bounds, K, bands,
                               gap_tol: float = 1e-4, n_scan: int = 21,
                               xtol: float = 1e-9) -> TuningResult:
    """Tune ``parameter`` until bands ``bands = (lower, upper)`` meet at ``K``.

    A coarse scan brackets the smallest gap, then a bounded scalar
    minimisation refines it.  Success means gap <= gap_tol * omega0.
    """
    lo_b, hi_b = bands
    n_bands = hi_b + 2
    problem = problem.centred_at(K)
    trace = []

    def gap(x):
        om = with_parameter(problem, parameter, x).solve(K, n_bands).omegas
        g = float(om[hi_b] - om[lo_b])
        trace.append((float(x), g, float(om[lo_b])))
        return g

    xs = np.linspace(bounds[0], bounds[1], n_scan)
    gs = [gap(x) for x in xs]
    i = int(np.argmin(gs))
    if gs[i] <= gap_tol * max(trace[i][2], 1e-300):
        x_best = float(xs[i])
    else:
        a = xs[max(i - 1, 0)]
        b = xs[min(i + 1, n_scan - 1)]
        res = scipy.optimize.minimize_scalar(gap, bounds=(a, b), method="bounded",
                                             options={"xatol": xtol})
        x_best = float(res.x) if res.fun <= gs[i] else float(xs[i])
    om = with_parameter(problem, parameter, x_best).solve(K, n_bands).omegas
    g = float(om[hi_b] - om[lo_b])
    w0 = float(np.mean(om[lo_b:hi_b + 1]))
    return TuningResult(parameter, x_best, g, w0, g <= gap_tol * w0, trace)


SCHEMA_VERSION = "1.0"


def _cplx(a) -> object:
    a = np.asarray(a)
    if np.all(np.abs(a.imag) == 0):
        return a.real.tolist()
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def oracle_comparison(tensors: HfhTensors, fd) -> dict:
    """Compare curvatures (and slopes for Dirac groups) against FD derivatives."""
    out = {"max_fd_gradient": float(np.max(np.abs(fd.gradient))), "directions": []}
    worst = 0.0
    for u, (grad, curv) in fd.directional.items():
        u = np.asarray(u)
        row = {"direction": u.tolist(), "fd_curvature": np.sort(tensors.omega0 * curv).tolist()}
        if tensors.classification == DIRAC:
            br = dirac_dispersion(tensors, direction=u)
            row["hfh_slopes"] = np.sort(br.slopes).tolist()
            row["fd_slopes"] = np.sort(grad).tolist()
            lin = ~br.quadratic_fallback
            err = np.abs(np.sort(grad)[lin] - np.sort(br.slopes)[lin]) / np.abs(np.sort(br.slopes)[lin])
            worst = max(worst, float(np.max(err)) if err.size else 0.0)
        else:
            W = tensors.quadratic_matrix(u)
            pred = np.sort(np.linalg.eigvalsh(0.5 * (W + W.conj().T)))
            row["hfh_curvature"] = pred.tolist()
            fdc = np.sort(tensors.omega0 * curv)
            sig = np.abs(pred) > 0.01
            if np.any(sig):
                worst = max(worst, float(np.max(np.abs(fdc[sig] - pred[sig]) / np.abs(pred[sig]))))
        out["directions"].append(row)
    out["max_relative_error"] = worst
    return out


def tensor_report(tensors: HfhTensors, vertex_label: str = "", oracle: dict | None = None) -> dict:
    rep = {
        "schema_version": SCHEMA_VERSION,
        "vertex": vertex_label,
        "K": np.asarray(tensors.K).tolist(),
        "bands": [b + 1 for b in tensors.band_indices],
        "omega0": tensors.omega0,
        "p": tensors.p,
        "classification": tensors.classification,
        "Q_residual": float(np.max(np.abs(tensors.Q - np.eye(tensors.p)))),
        "P": _cplx(tensors.P),
        "T": _cplx(tensors.T),
        "M": _cplx(tensors.M),
        "T_tilde": tensors.T_tilde.tolist(),
        "T_tilde_diagonals": [np.diag(t).tolist() for t in tensors.T_tilde],
        "decoupling_residual": tensors.decoupling_residual,
        "decoupled": bool(tensors.decoupled),
        "compatibility_residual": tensors.compatibility,
        "gauge_residual": tensors.gauge,
    }
    if tensors.classification == DIRAC:
        rep["C"] = _cplx(tensors.C)
        rep["D"] = _cplx(tensors.D)
    if oracle is not None:
        rep["oracle"] = oracle
    return rep
