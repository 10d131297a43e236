"""Square and cubic lattices in dimensionless cell coordinates.

Lengths are measured in units of the half-pitch ``l``, so the unit cell is
``[-1, 1]^d``, reciprocal lattice vectors are integer multiples of ``pi`` and
the first Brillouin zone is ``[-pi/2, pi/2]^d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PERIODIC = "periodic"
ANTIPERIODIC = "antiperiodic"

_VERTEX_INDEX = {"G": 0, "X": 1, "M": 2, "R": 3}
VERTEX_ALIASES = {"G": "G", "Gamma": "G", "Γ": "G", "X": "X", "M": "M", "R": "R"}


@dataclass(frozen=True)
class LatticeSpec:
    dimension: int = 2
    half_pitch_l: float = 1.0

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        if not self.half_pitch_l > 0:
            raise ValueError("half_pitch_l must be positive")

    @property
    def cell_side(self) -> float:
        return 2.0

    def reciprocal_basis(self) -> np.ndarray:
        return np.pi * np.eye(self.dimension)


@dataclass(frozen=True)
class BrillouinVertex:
    label: str
    K: tuple
    parity: tuple = field(init=False)

    def __post_init__(self):
        parity = []
        for k in self.K:
            if abs(k) < 1e-14:
                parity.append(PERIODIC)
            elif abs(abs(k) - np.pi / 2) < 1e-14:
                parity.append(ANTIPERIODIC)
            else:
                raise ValueError(f"{self.label}: component {k} is not a standing-wave value")
        object.__setattr__(self, "parity", tuple(parity))

    @property
    def k(self) -> np.ndarray:
        return np.asarray(self.K, dtype=float)

    def bloch_phase(self) -> np.ndarray:
        """Phase picked up across one cell (length 2) along each axis."""
        return np.exp(2j * self.k)


def vertex(label: str, dimension: int) -> BrillouinVertex:
    key = VERTEX_ALIASES.get(label)
    if key is None or (key == "R" and dimension == 2):
        raise ValueError(f"unknown vertex {label!r} for dimension {dimension}")
    n_half = _VERTEX_INDEX[key]
    K = tuple(np.pi / 2 if i < n_half else 0.0 for i in range(dimension))
    return BrillouinVertex(key, K)


def ibz_vertices(lattice: LatticeSpec) -> list[BrillouinVertex]:
    labels = ["G", "X", "M"] + (["R"] if lattice.dimension == 3 else [])
    return [vertex(lab, lattice.dimension) for lab in labels]


@dataclass(frozen=True)
class KPath:
    segments: tuple
    samples_per_segment: int
    points: np.ndarray
    segment_of_point: np.ndarray

    @property
    def labels(self) -> list[str]:
        return [self.segments[0][0]] + [seg[1] for seg in self.segments]

    def vertex_indices(self) -> list[int]:
        n = self.samples_per_segment - 1
        return [i * n for i in range(len(self.segments) + 1)]


def ibz_path(lattice: LatticeSpec, samples_per_segment: int) -> KPath:
    """Closed loop around the irreducible zone, shared endpoints deduplicated."""
    if samples_per_segment < 2:
        raise ValueError("samples_per_segment must be >= 2")
    if lattice.dimension == 2:
        route = ["G", "X", "M", "G"]
    else:
        route = ["G", "X", "M", "G", "R", "X"]
    segments = tuple(zip(route[:-1], route[1:]))
    t = np.linspace(0.0, 1.0, samples_per_segment)
    pts = [vertex(route[0], lattice.dimension).k[None, :]]
    seg_idx = [0]
    for s, (a, b) in enumerate(segments):
        ka = vertex(a, lattice.dimension).k
        kb = vertex(b, lattice.dimension).k
        pts.append(ka[None, :] + t[1:, None] * (kb - ka)[None, :])
        seg_idx.extend([s] * (samples_per_segment - 1))
    return KPath(segments, samples_per_segment, np.vstack(pts), np.asarray(seg_idx))
