"""Unit-cell material layouts and their analytic Fourier coefficients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import j1

ROLES = ("inv_eps", "eps", "mu")


@dataclass(frozen=True)
class Inclusion:
    """A disk (2D) or sphere (3D) of permittivity ``eps``."""

    shape: str
    radius: float
    eps: float
    center: tuple = ()

    def __post_init__(self):
        if self.shape not in ("disk", "sphere"):
            raise ValueError(f"unsupported inclusion shape {self.shape!r}")
        if not self.radius > 0:
            raise ValueError("inclusion radius must be positive")
        if not self.eps > 0:
            raise ValueError("inclusion permittivity must be real and positive")

    @property
    def dimension(self) -> int:
        return 2 if self.shape == "disk" else 3

    @property
    def volume(self) -> float:
        if self.shape == "disk":
            return np.pi * self.radius**2
        return 4.0 * np.pi * self.radius**3 / 3.0

    def centre(self) -> np.ndarray:
        c = np.zeros(self.dimension)
        c[: len(self.center)] = self.center
        return c

    def indicator_transform(self, G: np.ndarray) -> np.ndarray:
        """Integral of exp(-i G.x) over the inclusion, for rows of ``G``."""
        G = np.atleast_2d(G)
        g = np.linalg.norm(G, axis=1)
        x = g * self.radius
        out = np.full(g.shape, self.volume, dtype=float)
        nz = x > 1e-12
        if self.shape == "disk":
            out[nz] = 2.0 * np.pi * self.radius * j1(x[nz]) / g[nz]
        else:
            xs = x[nz]
            out[nz] = 4.0 * np.pi * self.radius**3 * (np.sin(xs) - xs * np.cos(xs)) / xs**3
        c = self.centre()
        if np.any(c):
            return out * np.exp(-1j * G @ c)
        return out.astype(complex)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(pts - self.centre(), axis=-1) < self.radius


@dataclass(frozen=True)
class MediumSpec:
    """Background permittivity plus non-overlapping inclusions.

    ``supercell_height`` (3D only) extends the cell along x3 to
    ``[-height, height]`` in units of l; ``None`` means an ordinary cube.
    """

    background_eps: float = 1.0
    inclusions: tuple = ()
    dimension: int = 2
    supercell_height: float | None = None
    _mu: float = field(default=1.0, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        if not self.background_eps > 0:
            raise ValueError("background permittivity must be real and positive")
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if self.supercell_height is not None:
            if self.dimension != 3:
                raise ValueError("a supercell is only defined for 3D media")
            if self.supercell_height < 1:
                raise ValueError("supercell height must be at least one cell")
        half = self.half_extent
        for inc in self.inclusions:
            if inc.dimension != self.dimension:
                raise ValueError(f"{inc.shape} inclusion in a {self.dimension}D cell")
            c = inc.centre()
            if np.any(np.abs(c) + inc.radius > half + 1e-12):
                raise ValueError("inclusion does not fit inside the cell")
        for a in range(len(self.inclusions)):
            for b in range(a + 1, len(self.inclusions)):
                ia, ib = self.inclusions[a], self.inclusions[b]
                if np.linalg.norm(ia.centre() - ib.centre()) < ia.radius + ib.radius:
                    raise ValueError("inclusions overlap")

    @property
    def half_extent(self) -> np.ndarray:
        h = np.ones(self.dimension)
        if self.supercell_height is not None:
            h[2] = self.supercell_height
        return h

    @property
    def cell_volume(self) -> float:
        return float(np.prod(2.0 * self.half_extent))

    @property
    def is_homogeneous(self) -> bool:
        return all(inc.eps == self.background_eps for inc in self.inclusions)

    def reciprocal_spacing(self) -> np.ndarray:
        return np.pi / self.half_extent

    def eps_at(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], self.background_eps)
        for inc in self.inclusions:
            out[inc.contains(pts)] = inc.eps
        return out

    def mean(self, role: str) -> float:
        return float(np.real(fourier_coefficients(self, role, np.zeros((1, self.dimension)))[0]))


def homogeneous(eps: float, dimension: int = 2) -> MediumSpec:
    return MediumSpec(background_eps=eps, dimension=dimension)


def filling_fraction(medium: MediumSpec) -> float:
    return sum(inc.volume for inc in medium.inclusions) / medium.cell_volume


def _material_value(role: str, eps: float) -> float:
    if role == "inv_eps":
        return 1.0 / eps
    if role == "eps":
        return eps
    if role == "mu":
        return 1.0
    raise ValueError(f"unknown coefficient role {role!r}; expected one of {ROLES}")


def _check_on_lattice(medium: MediumSpec, G: np.ndarray) -> None:
    m = G / medium.reciprocal_spacing()
    if not np.allclose(m, np.round(m), atol=1e-9, rtol=0):
        raise ValueError("reciprocal vector is not on the lattice of the cell")


def fourier_coefficients(medium: MediumSpec, role: str, G: Sequence) -> np.ndarray:
    """Cell-averaged Fourier coefficients (1/|C|) int f(x) exp(-i G.x) dx.

    ``G`` is an array of reciprocal vectors, one per row.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[1] != medium.dimension:
        raise ValueError(f"expected {medium.dimension}-component reciprocal vectors")
    _check_on_lattice(medium, G)
    bg = _material_value(role, medium.background_eps)
    is_zero = np.all(np.abs(G) < 1e-12, axis=1)
    out = np.where(is_zero, bg, 0.0).astype(complex)
    for inc in medium.inclusions:
        contrast = _material_value(role, inc.eps) - bg
        if contrast != 0.0:
            out += contrast * inc.indicator_transform(G) / medium.cell_volume
    return out


def fourier_coefficient(medium: MediumSpec, role: str, G: Sequence) -> complex:
    return complex(fourier_coefficients(medium, role, np.asarray(G, dtype=float)[None, :])[0])
