"""Bloch band structures and high-frequency homogenisation for periodic dielectrics."""
from .bloch import (BlochProblem, BlochSolution, PhysicsMode, PlaneWaveBasis, acoustic_slope,
                    band_structure, fd_band_derivatives, fd_refined)
from .effmed import classify_pde, decay_rate, low_frequency_tensor, verify_symmetries
from .hfh import (analyse_group, analyse_vertex, asymptotic_band, classify, compute_P, compute_T,
                  dirac_dispersion, find_accidental_degeneracy, locate_group, solve_first_order)
from .lattice import LatticeSpec, ibz_path, ibz_vertices, vertex
from .medium import Inclusion, MediumSpec, fourier_coefficient, homogeneous

__version__ = "0.1.0"
