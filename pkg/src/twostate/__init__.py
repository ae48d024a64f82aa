"""Numerical laboratory for a gradient-coupled two-state Schrodinger system.

Forward solver, Carleman weight machinery, and a probe-based protocol for
testing Lipschitz stability and linearized recovery of the coupling coefficients.
"""

from .coefficients import CoefficientSet, make_baseline, sample_perturbation
from .errors import CompatibilityError, ConfigError, CounterexampleCandidate, SolverError
from .forward import assemble_hamiltonian, solve_ibvp
from .geometry import Domain, build_grid, select_observation_boundary

__all__ = [
    "CoefficientSet",
    "CompatibilityError",
    "ConfigError",
    "CounterexampleCandidate",
    "Domain",
    "SolverError",
    "assemble_hamiltonian",
    "build_grid",
    "make_baseline",
    "sample_perturbation",
    "select_observation_boundary",
    "solve_ibvp",
]
