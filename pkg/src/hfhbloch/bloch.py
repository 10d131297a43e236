"""Plane-wave Bloch eigenproblems for periodic dielectrics.

Three physics families share one representation: fields are stored as
Fourier coefficients on a box of reciprocal vectors, scalar fields as arrays
of shape ``(nG,)`` and vector fields as ``(nG, 3)``.  Inner products are cell
averages, so Parseval reduces them to plain coefficient sums.

Vector problems (quasi-2D fibres and full 3D) are solved in a transverse
basis, two polarisations per plane wave, which keeps ``div H = 0`` exact.
The operators ``A(K)`` are quadratic in the Bloch vector; their first and
second K-derivatives are exposed for the homogenisation code.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg

from .lattice import KPath
from .medium import MediumSpec, fourier_coefficients

log = logging.getLogger(__name__)

SCALAR_H3 = "scalar_h3"
SCALAR_E3 = "scalar_e3"
QUASI2D = "quasi2d"
VECTOR3D = "vector3d"
MODE_KINDS = (SCALAR_H3, SCALAR_E3, QUASI2D, VECTOR3D)

ZERO_OMEGA = 1e-8
NEGATIVE_EIG_TOL = 1e-10
HERMITIAN_TOL = 1e-12


class AssemblyError(RuntimeError):
    pass


class EigenSolverError(RuntimeError):
    pass


class SingularSolveError(RuntimeError):
    pass


DEFLATED_RESIDUAL_TOL = 1e-8


def _solve_checked(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Hermitian solve that refuses singular systems and checks the residual."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            x = scipy.linalg.solve(M, rhs, assume_a="her")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularSolveError(f"deflated system is singular: {exc}") from None
    res = np.linalg.norm(M @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if res > DEFLATED_RESIDUAL_TOL:
        raise SingularSolveError(f"deflated solve residual {res:.2e} exceeds {DEFLATED_RESIDUAL_TOL}")
    return x


@dataclass(frozen=True)
class PhysicsMode:
    kind: str
    beta_l: float = 0.0

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise ValueError(f"unknown physics mode {self.kind!r}; expected one of {MODE_KINDS}")
        if self.beta_l < 0:
            raise ValueError("beta_l must be non-negative")
        if self.kind != QUASI2D and self.beta_l != 0:
            raise ValueError("beta_l only applies to the quasi-2D mode")

    @classmethod
    def scalar_h3(cls):
        return cls(SCALAR_H3)

    @classmethod
    def scalar_e3(cls):
        return cls(SCALAR_E3)

    @classmethod
    def quasi2d(cls, beta_l: float):
        return cls(QUASI2D, float(beta_l))

    @classmethod
    def vector3d(cls):
        return cls(VECTOR3D)

    @property
    def is_vector(self) -> bool:
        return self.kind in (QUASI2D, VECTOR3D)

    @property
    def lattice_dimension(self) -> int:
        return 3 if self.kind == VECTOR3D else 2


@dataclass(frozen=True)
class PlaneWaveBasis:
    """Reciprocal vectors ``spacing * m`` with ``|m_i| <= cutoff``.

    On a supercell axis the spacing is ``pi / height`` and the cutoff is
    scaled by the height unless ``z_cutoff`` is given.  ``shift`` adds one
    extra index on the negative side of chosen axes so that ``K + G`` is
    symmetric about zero when ``K_i = pi/2`` (see ``centred_for``).
    """

    dimension: int
    cutoff: int = 12
    height: float | None = None
    z_cutoff: int | None = None
    shift: tuple = ()

    def __post_init__(self):
        if self.cutoff < 1:
            raise AssemblyError("basis too small: need at least 3 plane waves per axis")
        if self.height is not None and self.dimension != 3:
            raise ValueError("supercell height requires a 3D basis")

    @property
    def cutoffs(self) -> np.ndarray:
        c = np.full(self.dimension, self.cutoff)
        if self.height is not None:
            c[2] = self.z_cutoff if self.z_cutoff is not None else int(round(self.cutoff * self.height))
        return c

    @property
    def lower(self) -> np.ndarray:
        s = np.zeros(self.dimension, dtype=int)
        s[: len(self.shift)] = self.shift
        return -self.cutoffs - s

    def centred_for(self, K) -> "PlaneWaveBasis":
        """Basis whose wavevectors ``K + G`` are symmetric about the origin.

        Only axes with ``K_i`` equal to 0 or ``pi/2`` can be centred; other
        components leave the box unchanged.
        """
        K = np.asarray(K, dtype=float).ravel()
        shift = [1 if (i < len(K) and abs(K[i] - np.pi / 2) < 1e-12) else 0
                 for i in range(self.dimension)]
        if self.height is not None:
            shift[2] = 0
        return replace(self, shift=tuple(shift))

    @property
    def spacing(self) -> np.ndarray:
        s = np.full(self.dimension, np.pi)
        if self.height is not None:
            s[2] = np.pi / self.height
        return s

    @cached_property
    def indices(self) -> np.ndarray:
        axes = [np.arange(lo, c + 1) for lo, c in zip(self.lower, self.cutoffs)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)

    @cached_property
    def G(self) -> np.ndarray:
        return self.indices * self.spacing

    @property
    def size(self) -> int:
        return len(self.indices)

    def difference_table(self):
        """Flat index of ``m_a - m_b`` into the box of differences, plus that box."""
        span = self.cutoffs - self.lower
        shape = 2 * span + 1
        idx = np.zeros((self.size, self.size), dtype=np.int64)
        stride = 1
        for axis in reversed(range(self.dimension)):
            col = self.indices[:, axis]
            idx += (col[:, None] - col[None, :] + span[axis]) * stride
            stride *= shape[axis]
        axes = [np.arange(-s, s + 1) for s in span]
        grid = np.meshgrid(*axes, indexing="ij")
        box = np.stack([g.ravel() for g in grid], axis=1) * self.spacing
        return idx, box

    def negation_map(self) -> np.ndarray:
        """Permutation sending the row of ``m`` to the row of ``-m``."""
        if np.any(self.lower != -self.cutoffs):
            raise ValueError("a shifted basis is not closed under negation")
        c = self.cutoffs
        flat = np.ravel_multi_index((-self.indices + c).T, tuple(2 * c + 1))
        return flat


def default_basis(medium: MediumSpec, cutoff: int | None = None) -> PlaneWaveBasis:
    if medium.dimension == 2:
        return PlaneWaveBasis(2, 12 if cutoff is None else cutoff)
    return PlaneWaveBasis(3, 6 if cutoff is None else cutoff, height=medium.supercell_height)


def _toeplitz(basis: PlaneWaveBasis, medium: MediumSpec, role: str) -> np.ndarray:
    idx, box = basis.difference_table()
    table = fourier_coefficients(medium, role, box)
    if np.max(np.abs(table.imag)) < 1e-15:
        table = table.real
    return table[idx]


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.cross(a, b)


def transverse_frames(k: np.ndarray) -> np.ndarray:
    """Orthonormal (e1, e2, khat) per row of ``k``; shape (nG, 3, 3).

    Where ``k`` vanishes the frame is the Cartesian triad.
    """
    n = len(k)
    norm = np.linalg.norm(k, axis=1)
    frames = np.zeros((n, 3, 3))
    zero = norm < 1e-12
    frames[zero] = np.eye(3)
    kk = k[~zero] / norm[~zero, None]
    ref = np.zeros_like(kk)
    ref[np.arange(len(kk)), np.argmin(np.abs(kk), axis=1)] = 1.0
    e1 = _cross(kk, ref)
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = _cross(kk, e1)
    frames[~zero, 0] = e1
    frames[~zero, 1] = e2
    frames[~zero, 2] = kk
    return frames


@dataclass
class OperatorPair:
    A: np.ndarray
    B: np.ndarray | None
    K: np.ndarray
    problem: "BlochProblem"


@dataclass
class BlochSolution:
    K: np.ndarray
    omegas: np.ndarray
    vectors: np.ndarray
    problem: "BlochProblem" = field(repr=False)

    @property
    def mode(self) -> PhysicsMode:
        return self.problem.mode

    @property
    def basis(self) -> PlaneWaveBasis:
        return self.problem.basis

    def fields(self, bands=None) -> np.ndarray:
        """Fourier coefficients of the requested bands, band index last."""
        v = self.vectors if bands is None else self.vectors[:, bands]
        return self.problem.to_field(self.K, v)


class BlochProblem:
    """Medium, physics mode and basis bundled with cached coefficient matrices.

    ``factorization`` selects how the stiffness coefficient is truncated:
    ``"direct"`` takes the Toeplitz matrix of the Fourier coefficients of
    1/eps, ``"inverse"`` (the default) inverts the Toeplitz matrix of eps.
    """

    def __init__(self, medium: MediumSpec, mode: PhysicsMode, basis: PlaneWaveBasis | None = None,
                 factorization: str = "inverse"):
        if factorization not in ("direct", "inverse"):
            raise ValueError("factorization must be 'direct' or 'inverse'")
        if basis is None:
            basis = default_basis(medium)
        if mode.kind == VECTOR3D and medium.dimension != 3:
            raise ValueError("vector3d mode needs a 3D medium")
        if mode.kind != VECTOR3D and medium.dimension != 2:
            raise ValueError(f"{mode.kind} mode needs a 2D medium")
        if basis.dimension != medium.dimension:
            raise ValueError("basis and medium dimensions differ")
        if (basis.height is None) != (medium.supercell_height is None) or (
                basis.height is not None and basis.height != medium.supercell_height):
            raise ValueError("basis supercell height must match the medium")
        self.medium = medium
        self.mode = mode
        self.basis = basis
        self.factorization = factorization

    def centred_at(self, K) -> "BlochProblem":
        """Same problem on a basis centred for the vertex ``K``."""
        basis = self.basis.centred_for(self.bloch_vector(K))
        if basis == self.basis:
            return self
        return BlochProblem(self.medium, self.mode, basis, self.factorization)

    def __repr__(self):
        return (f"BlochProblem(mode={self.mode.kind}, beta_l={self.mode.beta_l}, "
                f"nG={self.basis.size}, factorization={self.factorization})")

    # -- geometry ---------------------------------------------------------
    @property
    def n_bloch(self) -> int:
        """Number of Bloch (long-scale) directions."""
        if self.mode.kind == VECTOR3D and self.medium.supercell_height is None:
            return 3
        return 2

    @property
    def size(self) -> int:
        return self.basis.size * (2 if self.mode.is_vector else 1)

    def bloch_vector(self, K) -> np.ndarray:
        K = np.asarray(K, dtype=float).ravel()
        if len(K) == self.n_bloch:
            return K
        if len(K) == 3 and self.n_bloch == 2 and self.mode.kind == VECTOR3D and abs(K[2]) < 1e-14:
            return K[:2]
        raise ValueError(f"expected a {self.n_bloch}-component Bloch vector, got {K}")

    def kvecs(self, K) -> np.ndarray:
        """``K + G`` for every plane wave; 3-vectors for vector modes."""
        K = self.bloch_vector(K)
        G = self.basis.G
        if not self.mode.is_vector:
            return G + K
        k = np.zeros((len(G), 3))
        k[:, : G.shape[1]] = G
        k[:, : len(K)] += K
        if self.mode.kind == QUASI2D:
            k[:, 2] = self.mode.beta_l
        return k

    # -- coefficient matrices ------------------------------------------------
    @cached_property
    def stiffness(self) -> np.ndarray:
        """Coefficient of the curl/gradient form (1/eps, or identity for E3)."""
        if self.mode.kind == SCALAR_E3:
            return np.eye(self.basis.size)
        if self.factorization == "direct":
            return _toeplitz(self.basis, self.medium, "inv_eps")
        return np.linalg.inv(_toeplitz(self.basis, self.medium, "eps"))

    @cached_property
    def mass(self) -> np.ndarray | None:
        if self.mode.kind == SCALAR_E3:
            return _toeplitz(self.basis, self.medium, "eps")
        return None

    def apply_mass(self, f: np.ndarray) -> np.ndarray:
        return f if self.mass is None else self.mass @ f

    # -- assembly ------------------------------------------------------------
    def frames(self, K) -> np.ndarray:
        return transverse_frames(self.kvecs(K))

    def assemble(self, K) -> OperatorPair:
        K = self.bloch_vector(K)
        k = self.kvecs(K)
        if self.mode.is_vector:
            fr = self.frames(K)
            # (k x e_lambda) for both polarisations: shape (2, nG, 3)
            c = np.stack([_cross(k, fr[:, 0]), _cross(k, fr[:, 1])])
            eta = self.stiffness
            blocks = [[eta * (c[a] @ c[b].T) for b in range(2)] for a in range(2)]
            A = np.block(blocks)
            B = None
        else:
            A = self.stiffness * (k @ k.T)
            B = self.mass
        scale = np.linalg.norm(A)
        if scale > 0 and np.linalg.norm(A - A.conj().T) > HERMITIAN_TOL * scale:
            raise AssemblyError("assembled stiffness operator is not Hermitian")
        return OperatorPair(A, B, K, self)

    def solve(self, K, n_bands: int) -> "BlochSolution":
        return solve(self.assemble(K), n_bands)

    # -- field representation -----------------------------------------------
    def to_field(self, K, vecs: np.ndarray) -> np.ndarray:
        if not self.mode.is_vector:
            return vecs
        nG = self.basis.size
        fr = self.frames(K)
        t1, t2 = vecs[:nG], vecs[nG:]
        if vecs.ndim == 1:
            return fr[:, 0] * t1[:, None] + fr[:, 1] * t2[:, None]
        return fr[:, 0, :, None] * t1[:, None, :] + fr[:, 1, :, None] * t2[:, None, :]

    def split_field(self, K, f: np.ndarray):
        """Transverse solver coordinates and the remaining frame component."""
        fr = self.frames(K)
        comps = np.einsum("gac,gc...->ag...", fr, f)
        return np.concatenate([comps[0], comps[1]], axis=0), comps[2]

    def time_reversal(self, K, f: np.ndarray) -> np.ndarray:
        """Antiunitary symmetry that fixes a vertex: ``f(G) -> conj(f(G'))``, ``K+G' = -(K+G)``.

        For the quasi-2D mode, whose fixed beta breaks plain time reversal,
        it is composed with the mirror x3 -> -x3 acting on the pseudovector H.
        Raises ValueError when ``-2K`` does not map the basis onto itself.
        """
        K = self.bloch_vector(K)
        idx = self.basis.indices
        shift = np.zeros(idx.shape[1])
        shift[: len(K)] = -2.0 * K / self.basis.spacing[: len(K)]
        if not np.allclose(shift, np.round(shift), atol=1e-9):
            raise ValueError("time reversal only maps the basis to itself at zone vertices")
        target = np.round(shift).astype(int)[None, :] - idx
        lookup = {tuple(m): i for i, m in enumerate(idx)}
        try:
            perm = np.array([lookup[tuple(m)] for m in target])
        except KeyError:
            raise ValueError("basis is not centred for this vertex; use centred_at(K)") from None
        out = np.conj(f[perm])
        if self.mode.kind == QUASI2D:
            out = out * np.array([-1.0, -1.0, 1.0]).reshape((1, 3) + (1,) * (f.ndim - 2))
        return out

    def inner(self, a: np.ndarray, b: np.ndarray) -> complex:
        return complex(np.vdot(a, b))

    def b_inner(self, a: np.ndarray, b: np.ndarray) -> complex:
        return complex(np.vdot(a, self.apply_mass(b)))

    # -- K-derivatives of the operator ---------------------------------------
    def apply_A(self, K, f: np.ndarray) -> np.ndarray:
        k = self.kvecs(K)
        eta = self.stiffness
        if self.mode.is_vector:
            return -_cross(k, eta @ _cross(k, f))
        return np.einsum("gd,gd->g", k, eta @ (k * f[:, None]))

    def apply_A1(self, K, j: int, f: np.ndarray) -> np.ndarray:
        """Coefficient of kappa_j in A(K + kappa) applied to ``f``."""
        k = self.kvecs(K)
        eta = self.stiffness
        if self.mode.is_vector:
            e = np.zeros(3)
            e[j] = 1.0
            return -_cross(e, eta @ _cross(k, f)) - _cross(k, eta @ _cross(e, f))
        return eta @ (k[:, j] * f) + k[:, j] * (eta @ f)

    def apply_A2(self, i: int, j: int, f: np.ndarray) -> np.ndarray:
        """Coefficient of kappa_i kappa_j (unsymmetrised) in A(K + kappa)."""
        eta = self.stiffness
        if self.mode.is_vector:
            ei = np.zeros(3)
            ej = np.zeros(3)
            ei[i] = 1.0
            ej[j] = 1.0
            return -_cross(ei, eta @ _cross(ej, f))
        return eta @ f if i == j else np.zeros_like(f)

    def deflated_solve(self, K, omega0_sq: float, rhs: np.ndarray, null_fields: np.ndarray,
                       check_compat: float = 1e-6):
        """Solve (A(K) - omega0^2 B) x = rhs off the span of ``null_fields``.

        ``rhs`` and ``null_fields`` carry a trailing column axis.  The part of
        the right-hand side that lies in the null space is removed first; its
        relative size is returned as the compatibility residual.  The
        solution is B-orthogonal to every null field.
        """
        if self.mode.is_vector:
            return self._deflated_solve_vector(K, omega0_sq, rhs, null_fields, check_compat)
        pair = self.assemble(K)
        H0 = null_fields
        BH0 = self.apply_mass(H0)
        coef = H0.conj().T @ rhs
        removed = BH0 @ coef
        compat = float(np.linalg.norm(removed) / max(np.linalg.norm(rhs), 1e-300))
        if compat > check_compat:
            raise CompatibilityError(compat)
        proj = rhs - removed
        B = np.eye(len(pair.A)) if pair.B is None else pair.B
        sigma = max(1.0, float(np.max(np.abs(np.diag(pair.A)))))
        M = pair.A - omega0_sq * B + sigma * BH0 @ BH0.conj().T
        x = _solve_checked(M, proj)
        x = x - H0 @ (BH0.conj().T @ x)
        return x, compat

    def _deflated_solve_vector(self, K, omega0_sq, rhs, null_fields, check_compat):
        pair = self.assemble(K)
        rt, rl = self.split_field(K, rhs)
        nt, nl = self.split_field(K, null_fields)
        coef = nt.conj().T @ rt
        removed = nt @ coef
        # the null fields are transverse; components along khat only see -omega0^2
        compat = float(np.linalg.norm(removed) / max(np.linalg.norm(rhs), 1e-300))
        if omega0_sq == 0.0:
            l_norm = float(np.linalg.norm(rl) / max(np.linalg.norm(rhs), 1e-300))
            compat = max(compat, l_norm)
        if compat > check_compat:
            raise CompatibilityError(compat)
        sigma = max(1.0, float(np.max(np.abs(np.diag(pair.A)))))
        M = pair.A - omega0_sq * np.eye(len(pair.A)) + sigma * nt @ nt.conj().T
        xt = _solve_checked(M, rt - removed)
        xt = xt - nt @ (nt.conj().T @ xt)
        xl = np.zeros_like(rl) if omega0_sq == 0.0 else -rl / omega0_sq
        fr = self.frames(K)
        nG = self.basis.size
        x = (np.einsum("gc,g...->gc...", fr[:, 0], xt[:nG])
             + np.einsum("gc,g...->gc...", fr[:, 1], xt[nG:])
             + np.einsum("gc,g...->gc...", fr[:, 2], xl))
        return x, compat


class CompatibilityError(RuntimeError):
    def __init__(self, residual: float):
        super().__init__(f"right-hand side has a null-space component of relative size {residual:.3e}")
        self.residual = residual


def assemble(K, medium: MediumSpec, mode: PhysicsMode, basis: PlaneWaveBasis | None = None,
             factorization: str = "inverse") -> OperatorPair:
    return BlochProblem(medium, mode, basis, factorization).assemble(K)


def solve(pair: OperatorPair, n_bands: int) -> BlochSolution:
    n = len(pair.A)
    if n_bands > n:
        raise ValueError(f"n_bands={n_bands} exceeds the basis size {n}")
    try:
        w, v = scipy.linalg.eigh(pair.A, pair.B, subset_by_index=[0, n_bands - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(str(exc)) from exc
    if w[0] < -NEGATIVE_EIG_TOL:
        raise EigenSolverError(f"negative eigenvalue {w[0]:.3e}: assembly is not semi-definite")
    omegas = np.sqrt(np.clip(w, 0.0, None))
    omegas[omegas < ZERO_OMEGA] = 0.0
    return BlochSolution(pair.K, omegas, v, pair.problem)


def band_structure(points: np.ndarray, problem: BlochProblem, n_bands: int,
                   workers: int = 1) -> np.ndarray:
    """Frequencies (n_points, n_bands), ascending per point."""
    points = np.asarray(points, dtype=float)

    def one(K):
        return problem.solve(K, n_bands).omegas

    problem.stiffness  # build the shared cache before threads read it
    problem.mass
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, points))
    else:
        rows = [one(K) for K in points]
    return np.vstack(rows)


def write_band_csv(path, kpath: KPath, omegas: np.ndarray) -> None:
    dim = kpath.points.shape[1]
    header = ["segment", "index"] + [f"K{i + 1}" for i in range(dim)] + ["band", "omega"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, K in enumerate(kpath.points):
            for b, om in enumerate(omegas[i]):
                w.writerow([int(kpath.segment_of_point[i]), i, *(f"{x:.9g}" for x in K), b + 1, f"{om:.9g}"])


def read_band_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


class BranchCrossingError(RuntimeError):
    pass


@dataclass
class FdDerivatives:
    """Finite-difference derivatives of each branch of a band cluster.

    ``directional`` maps a unit direction (as a tuple) to the first and
    second derivatives of every branch along it.
    """

    K0: np.ndarray
    h: float
    omega0: np.ndarray
    gradient: np.ndarray  # (p, d)
    hessian: np.ndarray  # (p, d, d)
    directional: dict


def _cluster_states(problem: BlochProblem, K, bands):
    sol = problem.solve(K, max(bands) + 1)
    f = sol.fields(list(bands))
    f = f.reshape(-1, len(bands)) if problem.mode.is_vector else f
    return sol.omegas[list(bands)], f


def _match(problem: BlochProblem, ref, new, min_overlap=0.5):
    """Permutation of the columns of ``new`` that follows ``ref`` by eigenvector overlap."""
    from scipy.optimize import linear_sum_assignment

    (w_ref, f_ref), (w_new, f_new) = ref, new
    if problem.mass is not None:
        O = np.abs(f_ref.conj().T @ (problem.mass @ f_new))
    else:
        O = np.abs(f_ref.conj().T @ f_new)
    rows, cols = linear_sum_assignment(-O)
    perm = np.empty(len(cols), dtype=int)
    perm[rows] = cols
    scale = max(np.max(np.abs(w_ref)), 1.0)
    for a, b in zip(rows, cols):
        if O[a, b] >= min_overlap:
            continue
        # a weak pairing is harmless inside a degenerate subspace
        deg_new = np.sum(np.abs(w_new - w_new[b]) < 1e-6 * scale) > 1
        deg_ref = np.sum(np.abs(w_ref - w_ref[a]) < 1e-6 * scale) > 1
        if not (deg_new or deg_ref):
            raise BranchCrossingError(
                f"branch overlap {O[a, b]:.2f} below {min_overlap}: a band crosses inside the stencil")
    captured = np.sum(O**2, axis=0)
    if np.any(captured < min_overlap):
        raise BranchCrossingError("a band from outside the cluster entered the stencil")
    return perm


def fd_band_derivatives(problem: BlochProblem, K0, bands, h: float = 0.01 * np.pi / 2,
                        workers: int = 1) -> FdDerivatives:
    """Gradient and Hessian of every branch in ``bands`` (0-based) at ``K0``.

    Five-point stencils at 0, +-h, +-2h along the axes and the diagonals
    ``(e_a +- e_b)/sqrt(2)``; branches are followed from +h outwards by
    eigenvector overlap, so degenerate and crossing branches are not mixed.
    """
    K0 = problem.bloch_vector(K0)
    d = len(K0)
    bands = list(bands)
    p = len(bands)
    w0 = problem.solve(K0, max(bands) + 1).omegas[bands]
    dirs = [np.eye(d)[a] for a in range(d)]
    for a in range(d):
        for b in range(a + 1, d):
            for sgn in (1.0, -1.0):
                u = np.eye(d)[a] + sgn * np.eye(d)[b]
                dirs.append(u / np.sqrt(2.0))
    jobs = [(u, s) for u in dirs for s in (1, 2, -1, -2)]

    def one(job):
        u, s = job
        return _cluster_states(problem, K0 + s * h * u, bands)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            states = list(pool.map(one, jobs))
    else:
        states = [one(j) for j in jobs]
    f0 = np.full(p, np.mean(w0)) if np.ptp(w0) < 1e-6 * max(np.max(w0), 1.0) else w0

    directional = {}
    first_ref = None
    for n, u in enumerate(dirs):
        sp1, sp2, sm1, sm2 = states[4 * n: 4 * n + 4]
        perm_ref = np.arange(p) if first_ref is None else _match(problem, first_ref, sp1)
        if first_ref is None:
            first_ref = sp1
        ref = (sp1[0][perm_ref], sp1[1][:, perm_ref])
        vals = {1: ref[0]}
        p2 = _match(problem, ref, sp2)
        vals[2] = sp2[0][p2]
        pm1 = _match(problem, ref, sm1)
        vals[-1] = sm1[0][pm1]
        ref_m = (sm1[0][pm1], sm1[1][:, pm1])
        pm2 = _match(problem, ref_m, sm2)
        vals[-2] = sm2[0][pm2]
        grad = (-vals[2] + 8 * vals[1] - 8 * vals[-1] + vals[-2]) / (12 * h)
        curv = (-vals[2] + 16 * vals[1] - 30 * f0 + 16 * vals[-1] - vals[-2]) / (12 * h * h)
        directional[tuple(np.round(u, 12))] = (grad, curv)

    keys = list(directional)
    gradient = np.stack([directional[keys[a]][0] for a in range(d)], axis=1)
    hessian = np.zeros((p, d, d))
    for a in range(d):
        hessian[:, a, a] = directional[keys[a]][1]
    n = d
    for a in range(d):
        for b in range(a + 1, d):
            dp, dm = directional[keys[n]][1], directional[keys[n + 1]][1]
            hessian[:, a, b] = hessian[:, b, a] = 0.5 * (dp - dm)
            n += 2
    return FdDerivatives(K0, h, w0, gradient, hessian, directional)


def fd_refined(problem: BlochProblem, K0, bands, h: float = 0.01 * np.pi / 2, rtol: float = 5e-3,
               max_halvings: int = 6, workers: int = 1) -> FdDerivatives:
    """FD derivatives with the step halved until the Hessian settles.

    A nearby band shrinks the quadratic region of a branch; the step is halved
    while the stencil sees a crossing or the Hessian still moves by more than
    ``rtol`` between successive steps.
    """
    prev = None
    for _ in range(max_halvings + 1):
        try:
            fd = fd_band_derivatives(problem, K0, bands, h, workers)
        except BranchCrossingError:
            if prev is not None:
                raise
            h *= 0.5
            continue
        if prev is not None:
            scale = max(np.max(np.abs(fd.hessian)), 1e-12)
            if np.max(np.abs(fd.hessian - prev.hessian)) <= rtol * scale:
                return fd
        prev = fd
        h *= 0.5
    if prev is None:
        raise BranchCrossingError("no FD step resolves the branches")
    return prev


def acoustic_slope(problem: BlochProblem, direction, h: float = 0.01 * np.pi / 2) -> float:
    """Phase speed of the lowest band leaving Gamma along ``direction``.

    One-sided Richardson estimate from Omega(h)/h and Omega(2h)/(2h); the
    central difference of |kappa| vanishes at Gamma.
    """
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    s1 = problem.solve(h * u, 1).omegas[0] / h
    s2 = problem.solve(2 * h * u, 1).omegas[0] / (2 * h)
    return float((4 * s1 - s2) / 3)
