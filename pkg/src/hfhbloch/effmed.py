"""Quasi-static effective permittivity, effective-PDE type and decay rates.

The static limit reuses the first-order machinery of :mod:`hfhbloch.hfh`
at ``Omega0 = 0``: the leading-order fields are constants, the first-order
cell problems are solved with those constants deflated, and the resulting
second-order tensor is contracted into an effective (inverse) permittivity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bloch import SCALAR_E3, SCALAR_H3, VECTOR3D, BlochProblem, acoustic_slope
from .hfh import t_hat_raw

SCHEMA_VERSION = "1.0"
ELLIPTIC = "elliptic"
HYPERBOLIC = "hyperbolic"
DEGENERATE = "degenerate"


class EffectiveMediumError(RuntimeError):
    pass


class DecayError(ValueError):
    pass


def _levi_civita() -> np.ndarray:
    e = np.zeros((3, 3, 3))
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        e[a, b, c] = 1.0
        e[a, c, b] = -1.0
    return e


@dataclass
class EffectivePermittivity:
    """Homogenised permittivity with its inverse split into mean and correction."""

    tensor: np.ndarray
    inverse: np.ndarray
    mean_inverse: float
    correction: np.ndarray
    mode: str
    T: np.ndarray = None  # static second-order tensor (raw, for diagnostics)
    h1: np.ndarray = None
    mass: float = 1.0

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.tensor)

    def phase_speeds(self, direction) -> np.ndarray:
        """Quasi-static phase speeds of the acoustic branches along ``direction``."""
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        if self.mode == VECTOR3D:
            cross = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
            W = -cross @ self.inverse @ cross
            w = np.linalg.eigvalsh(0.5 * (W + W.T))
            return np.sqrt(np.clip(np.sort(w)[1:], 0.0, None))
        return np.array([np.sqrt(u @ self.inverse @ u)])


def _static_fields(problem: BlochProblem):
    d = problem.n_bloch
    nG = problem.basis.size
    zero = int(np.flatnonzero(np.all(problem.basis.indices == 0, axis=1))[0])
    K = np.zeros(d)
    if problem.mode.is_vector:
        modes = np.zeros((3, nG, 3))
        for n in range(3):
            modes[n, zero, n] = 1.0
    else:
        modes = np.zeros((1, nG))
        modes[0, zero] = 1.0
    return K, modes.astype(complex)


def static_first_order(problem: BlochProblem, compat_tol: float = 1e-8):
    """Static cell fields h1[j, r] and the raw tensor T[i, j, n, r]."""
    K, modes = _static_fields(problem)
    # a supercell is still periodic along x3, so the static problem keeps all three directions
    d = 3 if problem.mode.is_vector else problem.n_bloch
    p = len(modes)
    rhs = np.stack([1j * problem.apply_A1(K, j, h) for j in range(d) for h in modes], axis=-1)
    x, _ = problem.deflated_solve(K, 0.0, rhs, np.moveaxis(modes, 0, -1), check_compat=compat_tol)
    h1 = np.moveaxis(x, -1, 0).reshape((d, p) + modes.shape[1:])
    return modes, h1, t_hat_raw(problem, K, modes, h1)


def low_frequency_tensor(problem: BlochProblem) -> EffectivePermittivity:
    """Quasi-static effective permittivity of the medium in ``problem``."""
    kind = problem.mode.kind
    medium = problem.medium
    mean_inv = medium.mean("inv_eps")
    if kind == VECTOR3D:
        modes, h1, T = static_first_order(problem)
        eps = _levi_civita()
        inv = -0.25 * np.einsum("nik,jrl,ijnr->kl", eps, eps, T).real
        mass = 1.0
    elif kind == SCALAR_H3:
        modes, h1, T = static_first_order(problem)
        inv = T[:, :, 0, 0].real
        mass = 1.0
    elif kind == SCALAR_E3:
        modes, h1, T = static_first_order(problem)
        inv = T[:, :, 0, 0].real
        mass = problem.b_inner(modes[0], modes[0]).real
    else:
        raise ValueError(f"quasi-static homogenisation is defined for vector3d and 2D scalar modes, not {kind}")
    inv = 0.5 * (inv + inv.T)
    if kind == SCALAR_E3:
        # stiffness is mu = 1; the permittivity enters through the averaged mass
        tensor = mass * np.linalg.inv(inv)
    else:
        tensor = np.linalg.inv(inv)
    if np.min(np.linalg.eigvalsh(tensor)) <= 0:
        raise EffectiveMediumError("effective permittivity is not positive definite; refine the basis")
    correction = inv - mean_inv * np.eye(len(inv)) if kind != SCALAR_E3 else np.zeros_like(inv)
    return EffectivePermittivity(tensor, np.linalg.inv(tensor), mean_inv, correction, kind, T, h1, mass)


def verify_symmetries(eff: EffectivePermittivity) -> dict:
    """Relative violations of the index symmetries of the static vector tensor."""
    T, h1 = eff.T, eff.h1
    scale = max(np.max(np.abs(T)), 1e-300)
    out = {
        "T_ij_nr=T_nr_ij": float(np.max(np.abs(T - np.einsum("ijnr->nrij", T))) / scale),
        "T_ij_nr=-T_ir_nj": float(np.max(np.abs(T + np.einsum("irnj->ijnr", T))) / scale),
        "T_ij_nr=-T_nj_ir": float(np.max(np.abs(T + np.einsum("njir->ijnr", T))) / scale),
    }
    if eff.mode == VECTOR3D:
        hs = max(np.max(np.abs(h1)), 1e-300)
        out["h1_antisymmetry"] = float(np.max(np.abs(h1 + np.swapaxes(h1, 0, 1))) / hs)
        out["h1_diagonal"] = float(max(np.max(np.abs(h1[r, r])) for r in range(3)) / hs)
    return out


def wiener_bounds(eff: EffectivePermittivity, medium) -> dict:
    lower = 1.0 / medium.mean("inv_eps")
    upper = medium.mean("eps")
    ev = eff.eigenvalues()
    tol = 1e-9 * upper
    return {
        "harmonic_mean": lower,
        "arithmetic_mean": upper,
        "eigenvalues": ev.tolist(),
        "lower_margin": float(np.min(ev) - lower),
        "upper_margin": float(upper - np.max(ev)),
        "holds": bool(np.min(ev) >= lower - tol and np.max(ev) <= upper + tol),
    }


def acoustic_oracle(problem: BlochProblem, eff: EffectivePermittivity, direction=None) -> dict:
    """Lowest-band slope at Gamma against the homogenised phase speed."""
    d = problem.n_bloch
    u = np.eye(d)[0] if direction is None else np.asarray(direction, float)
    slope = acoustic_slope(problem, u)
    u3 = np.zeros(3 if eff.mode == VECTOR3D else d)
    u3[:d] = u
    predicted = float(np.min(eff.phase_speeds(u3)))
    return {"fd_slope": slope, "predicted": predicted, "relative_error": abs(slope - predicted) / predicted}


@dataclass
class PdeClassification:
    kind: str
    eigenvalues: np.ndarray


def classify_pde(T_branch, tol: float = 1e-3) -> PdeClassification:
    T = np.asarray(T_branch, dtype=float)
    ev = np.linalg.eigvalsh(0.5 * (T + T.T))
    big = ev[np.abs(ev) >= tol]
    if len(big) == len(ev) and (np.all(big > 0) or np.all(big < 0)):
        kind = ELLIPTIC
    elif np.any(big > 0) and np.any(big < 0):
        kind = HYPERBOLIC
    else:
        kind = DEGENERATE
    return PdeClassification(kind, ev)


@dataclass
class DecayEstimate:
    direction: int
    alpha: float
    omega0: float
    omega: float


def decay_rate(T_branch, omega0: float, omega: float, direction: int = 0) -> DecayEstimate:
    """Evanescent rate of exp(-alpha x) solving T_dd f'' + (Omega^2 - Omega0^2) f = 0."""
    T = np.asarray(T_branch, dtype=float)
    Tdd = float(T[direction, direction]) if T.ndim == 2 else float(T)
    if Tdd == 0.0:
        raise DecayError("T has no curvature along the requested axis")
    ratio = (omega0**2 - omega**2) / Tdd
    if ratio < 0:
        side = "above" if omega > omega0 else "below"
        raise DecayError(f"Omega={omega} lies {side} Omega0={omega0} on the propagating side "
                         f"for T_dd={Tdd}; no evanescent solution")
    return DecayEstimate(direction, float(np.sqrt(ratio)), float(omega0), float(omega))


def effective_report(problem: BlochProblem, eff: EffectivePermittivity, oracle: dict | None = None) -> dict:
    rep = {
        "schema_version": SCHEMA_VERSION,
        "mode": eff.mode,
        "eps_hom": eff.tensor.tolist(),
        "eps_inv_hom": eff.inverse.tolist(),
        "mean_inverse": eff.mean_inverse,
        "correction": eff.correction.tolist(),
        "wiener": wiener_bounds(eff, problem.medium),
    }
    if eff.mode == VECTOR3D:
        rep["symmetries"] = verify_symmetries(eff)
    if eff.mode == SCALAR_E3:
        rep["mean_eps"] = eff.mass
    if oracle is not None:
        rep["oracle"] = oracle
    return rep
