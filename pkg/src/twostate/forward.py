"""Discrete two-state Hamiltonian and trapezoidal time stepping of the coupled IBVP.

The unknown is the stacked vector ``(u+, u-)`` over all grid nodes. The
Hamiltonian is stored on the full node set with boundary rows zeroed; the
interior block is what gets time-stepped, and its coupling to boundary
columns carries the Dirichlet data to the right-hand side.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coefficients import TOL_DIV, CoefficientSet, discrete_divergence
from .errors import CompatibilityError, SolverError
from .geometry import (
    ObservationBoundary,
    SpatialGrid,
    central_difference,
    gradient_all,
    interior_mask,
    l2_norm,
    laplacian,
    laplacian_all,
    neumann_trace,
)


def regularity_index(n: int) -> int:
    """The natural number N in ((n + 2)/4 + 1, (n + 2)/4 + 2]."""
    lo = (n + 2) / 4 + 1
    return math.floor(lo) + 1


@dataclass(frozen=True, eq=False)
class TwoStateField:
    uplus: np.ndarray
    uminus: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.stack([self.uplus, self.uminus]).astype(complex)

    @classmethod
    def from_stacked(cls, values) -> "TwoStateField":
        values = np.asarray(values)
        return cls(values[0], values[1])


def _pair(u) -> np.ndarray:
    if isinstance(u, TwoStateField):
        return u.stacked()
    return np.asarray(u, dtype=complex)


@dataclass(frozen=True, eq=False)
class TwoStateTrajectory:
    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray  # (nt, 2, N)

    @property
    def uplus(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def uminus(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def snapshot(self, n: int) -> TwoStateField:
        return TwoStateField.from_stacked(self.values[n])

    def norms(self) -> np.ndarray:
        return np.array([l2_norm(self.grid, v) for v in self.values])


@dataclass(frozen=True, eq=False)
class DiscreteHamiltonian:
    grid: SpatialGrid
    full: sp.csr_matrix  # (2N, 2N), boundary rows zero
    dofs: np.ndarray  # interior unknowns in stacked numbering
    bdofs: np.ndarray

    @property
    def interior(self) -> sp.csr_matrix:
        return self.full[self.dofs][:, self.dofs]

    @property
    def boundary_coupling(self) -> sp.csr_matrix:
        return self.full[self.dofs][:, self.bdofs]

    def apply(self, u) -> np.ndarray:
        """Apply to a stacked pair on all nodes; boundary rows come out zero."""
        u = _pair(u)
        return (self.full @ u.ravel()).reshape(u.shape)


def _stacked_dofs(grid: SpatialGrid):
    n = grid.size
    return (np.concatenate([grid.interior, grid.interior + n]),
            np.concatenate([grid.boundary, grid.boundary + n]))


def gradient_coupling_matrix(grid: SpatialGrid, A: np.ndarray) -> sp.csr_matrix:
    """Skew form ``(A.D + D.A)/2 - div_h(A)/2`` of ``A . grad``.

    Its symmetric part is exactly ``-diag(div_h A)/2``, so the coupling is
    skew-symmetric precisely when the centered divergence of A vanishes.
    """
    A = np.asarray(A, dtype=float).reshape(grid.dim, grid.size)
    B = sp.csr_matrix((grid.size, grid.size))
    for k in range(grid.dim):
        D = central_difference(grid, k)
        Ak = sp.diags(A[k])
        B = B + 0.5 * (Ak @ D + D @ Ak)
    B = B - 0.5 * sp.diags(discrete_divergence(grid, A))
    return sp.diags(interior_mask(grid).astype(float)) @ B


def assemble_hamiltonian(grid: SpatialGrid, coeffs: CoefficientSet, tol_div: float = TOL_DIV) -> DiscreteHamiltonian:
    a_sup = float(np.max(np.abs(coeffs.A))) if coeffs.A.size else 0.0
    div = float(np.max(np.abs(discrete_divergence(grid, coeffs.A))))
    if div > tol_div * max(a_sup, 1e-300):
        warnings.warn(f"vector potential is not divergence-free (residual {div:.3e}); "
                      "the Hamiltonian will not be Hermitian", RuntimeWarning, stacklevel=2)
    mask = sp.diags(interior_mask(grid).astype(float))
    lap = laplacian(grid)
    B = gradient_coupling_matrix(grid, coeffs.A)
    P = mask @ sp.diags(coeffs.p)
    full = sp.bmat([
        [-lap + mask @ sp.diags(coeffs.qplus), B + P],
        [-B + P, -lap + mask @ sp.diags(coeffs.qminus)],
    ]).tocsr()
    dofs, bdofs = _stacked_dofs(grid)
    return DiscreteHamiltonian(grid, full, dofs, bdofs)


def hermiticity_defect(H: DiscreteHamiltonian) -> float:
    """max |H - H^*| / max |H| over the interior block."""
    Hi = H.interior
    diff = (Hi - Hi.conj().T).tocoo()
    worst = np.max(np.abs(diff.data)) if diff.nnz else 0.0
    return float(worst / np.max(np.abs(Hi.data)))


@dataclass
class RelativeBoundReport:
    epsilon: float
    bound: float  # C_eps from the explicit formula
    achieved: float  # smallest constant that works for the sampled family
    max_violation: float
    n_fields: int

    @property
    def passed(self) -> bool:
        return self.max_violation <= 0.0


def relative_bound_constant(coeffs: CoefficientSet, epsilon: float) -> float:
    sup = coeffs.sup_norms()
    return sup["A"] ** 2 / epsilon + math.sqrt(2.0) * sup["p"] + math.hypot(sup["qplus"], sup["qminus"])


def random_interior_fields(grid: SpatialGrid, count: int, seed) -> list[np.ndarray]:
    """Seeded complex two-state fields vanishing on the boundary: noise, smooth modes and mixtures."""
    rng = np.random.default_rng(seed)
    mask = interior_mask(grid)
    out = []
    for j in range(count):
        kind = j % 3
        if kind == 0:
            u = rng.standard_normal((2, grid.size)) + 1j * rng.standard_normal((2, grid.size))
        else:
            u = np.zeros((2, grid.size), dtype=complex)
            for _ in range(4):
                ks = rng.integers(1, 6, size=grid.dim)
                mode = np.ones(grid.size)
                for k in range(grid.dim):
                    s = (grid.coords[:, k] - grid.domain.lo[k]) / (grid.domain.hi[k] - grid.domain.lo[k])
                    mode = mode * np.sin(ks[k] * math.pi * s)
                c = rng.standard_normal((2, 2))
                u += (c[:, 0] + 1j * c[:, 1])[:, None] * mode
            if kind == 2:
                u += 0.05 * (rng.standard_normal((2, grid.size)) + 1j * rng.standard_normal((2, grid.size)))
        out.append(u * mask)
    return out


def check_relative_bound(grid: SpatialGrid, coeffs: CoefficientSet, epsilon: float,
                         n_fields: int = 200, seed=0) -> RelativeBoundReport:
    """Sample ``||(A.grad + p + q) u|| <= eps ||Lap u|| + C_eps ||u||`` over seeded fields."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    H = assemble_hamiltonian(grid, coeffs).full
    L = assemble_hamiltonian(grid, CoefficientSet.zero(grid, coeffs.M)).full  # -Lap on both components
    P = H - L
    C = relative_bound_constant(coeffs, epsilon)
    achieved = 0.0
    violation = -math.inf
    for u in random_interior_fields(grid, n_fields, seed):
        nu = l2_norm(grid, u)
        lhs = l2_norm(grid, (P @ u.ravel()).reshape(u.shape))
        lap = l2_norm(grid, (L @ u.ravel()).reshape(u.shape))
        achieved = max(achieved, (lhs - epsilon * lap) / nu)
        rhs = epsilon * lap + C * nu
        violation = max(violation, lhs - rhs - 1e-12 * rhs)
    return RelativeBoundReport(epsilon, C, achieved, violation, n_fields)


# -- boundary data -----------------------------------------------------------------

def apply_hamiltonian_all(grid: SpatialGrid, coeffs: CoefficientSet, u) -> np.ndarray:
    """Formal operator applied at every node, with one-sided stencils on the boundary."""
    u = _pair(u)
    gp = gradient_all(grid, u[0])
    gm = gradient_all(grid, u[1])
    a_gp = np.einsum("kn,kn->n", coeffs.A, gp)
    a_gm = np.einsum("kn,kn->n", coeffs.A, gm)
    return np.stack([
        -laplacian_all(grid, u[0]) + coeffs.qplus * u[0] + a_gm + coeffs.p * u[1],
        -laplacian_all(grid, u[1]) + coeffs.qminus * u[1] - a_gp + coeffs.p * u[0],
    ])


def time_grid(T: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ValueError(f"time step {dt} does not divide T={T}")
    return np.linspace(0.0, T, n + 1)


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Dirichlet data ``g(x, t) = sum_l poly[l] t**l`` sampled on ``times``."""

    times: np.ndarray
    nodes: np.ndarray
    poly: np.ndarray  # (order + 1, 2, n_boundary)

    @property
    def order(self) -> int:
        return self.poly.shape[0] - 1

    @property
    def values(self) -> np.ndarray:
        return self.at(self.times)

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        powers = t[..., None] ** np.arange(self.poly.shape[0])
        return np.tensordot(powers, self.poly, axes=(-1, 0))

    def derivative_at_zero(self, ell: int) -> np.ndarray:
        if ell > self.order:
            return np.zeros(self.poly.shape[1:], dtype=complex)
        return math.factorial(ell) * self.poly[ell]

    @classmethod
    def zeros(cls, grid: SpatialGrid, times) -> "BoundaryData":
        return cls(np.asarray(times, dtype=float), grid.boundary.copy(),
                   np.zeros((1, 2, len(grid.boundary)), dtype=complex))


def hamiltonian_powers(grid: SpatialGrid, coeffs: CoefficientSet, u0, order: int) -> list[np.ndarray]:
    out = [_pair(u0)]
    for _ in range(order):
        out.append(apply_hamiltonian_all(grid, coeffs, out[-1]))
    return out


def compatibility_boundary_data(grid: SpatialGrid, u0, baseline: CoefficientSet, order: int,
                                times) -> BoundaryData:
    """Time-polynomial Dirichlet data whose l-th derivative at t=0 is ``(-i)^l H^l u0`` on the boundary."""
    if order < 0:
        raise ValueError("compatibility order must be nonnegative")
    powers = hamiltonian_powers(grid, baseline, u0, order)
    poly = np.stack([(-1j) ** ell / math.factorial(ell) * powers[ell][:, grid.boundary]
                     for ell in range(order + 1)])
    return BoundaryData(np.asarray(times, dtype=float), grid.boundary.copy(), poly)


# -- time stepping -----------------------------------------------------------------

Source = Callable[[float], np.ndarray]


def solve_ibvp(grid: SpatialGrid, coeffs: CoefficientSet, u0, g: Optional[BoundaryData], dt: float,
               f: Optional[Source] = None, T: Optional[float] = None) -> TwoStateTrajectory:
    """Trapezoidal (Crank-Nicolson) integration of ``i du/dt = H u - f`` with pinned Dirichlet rows."""
    u0 = _pair(u0)
    if u0.shape != (2, grid.size):
        raise ValueError(f"initial state has shape {u0.shape}, expected {(2, grid.size)}")
    if g is None:
        times = time_grid(grid.domain.T if T is None else T, dt)
        g = BoundaryData.zeros(grid, times)
    else:
        times = g.times
        if not np.isclose(times[1] - times[0], dt, rtol=1e-9, atol=0):
            raise ValueError("boundary data time grid does not match dt")
    gvals = g.values  # (nt, 2, nb)
    scale = max(1.0, float(np.max(np.abs(u0))))
    mismatch = float(np.max(np.abs(gvals[0] - u0[:, grid.boundary])))
    if mismatch > 1e-10 * scale:
        raise CompatibilityError(f"boundary data at t=0 differs from the initial trace by {mismatch:.3e}")

    H = assemble_hamiltonian(grid, coeffs)
    Hii = H.interior.tocsc()
    Hib = H.boundary_coupling.tocsr()
    n = Hii.shape[0]
    eye = sp.identity(n, dtype=complex, format="csc")
    half = 0.5j * dt
    try:
        lu = splu((eye + half * Hii).tocsc())
    except RuntimeError as exc:
        raise SolverError(f"step matrix factorization failed: {exc}") from exc
    explicit = (eye - half * Hii).tocsr()

    nt = len(times)
    out = np.zeros((nt, 2, grid.size), dtype=complex)
    out[0] = u0
    u = u0.ravel()[H.dofs]
    fprev = None if f is None else _pair(f(times[0])).ravel()[H.dofs]
    for step in range(1, nt):
        gsum = (gvals[step - 1] + gvals[step]).ravel()
        rhs = explicit @ u - half * (Hib @ gsum)
        if f is not None:
            fnext = _pair(f(times[step])).ravel()[H.dofs]
            rhs = rhs + half * (fprev + fnext)
            fprev = fnext
        u = lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite state at step {step}")
        frame = np.zeros(2 * grid.size, dtype=complex)
        frame[H.dofs] = u
        frame[H.bdofs] = gvals[step].ravel()
        out[step] = frame.reshape(2, grid.size)
    return TwoStateTrajectory(grid, np.asarray(times, dtype=float), out)


# -- observation -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObservationTrace:
    times: np.ndarray
    nodes: np.ndarray
    values: np.ndarray  # (nt, 2, n_trace): normal derivative of du+/dt and du-/dt

    def __sub__(self, other: "ObservationTrace") -> "ObservationTrace":
        return ObservationTrace(self.times, self.nodes, self.values - other.values)


def time_derivative(traj: TwoStateTrajectory) -> np.ndarray:
    if len(traj.times) < 3:
        raise ValueError("need at least 3 time nodes to differentiate in time")
    return np.gradient(traj.values, traj.times, axis=0, edge_order=2)


def observe(traj: TwoStateTrajectory, where: ObservationBoundary) -> ObservationTrace:
    dt_u = time_derivative(traj)
    return ObservationTrace(traj.times.copy(), where.trace_nodes.copy(), neumann_trace(dt_u, where))


def extend_time_symmetric(traj: TwoStateTrajectory, parity: str, rtol: float = 1e-8) -> TwoStateTrajectory:
    """Extend a trajectory on [0, T] to [-T, T] by ``w(-t) = conj(w(t))`` or ``-conj(w(t))``."""
    if parity not in ("even-conjugate", "odd-conjugate"):
        raise ValueError(f"unknown parity {parity!r}")
    if abs(traj.times[0]) > 0:
        raise ValueError("trajectory must start at t=0")
    sign = 1.0 if parity == "even-conjugate" else -1.0
    w0 = traj.values[0]
    if sign < 0:
        real = float(np.max(np.abs(w0.real)))
        if real > rtol * max(float(np.max(np.abs(traj.values))), 1e-300):
            raise ValueError(f"odd-conjugate extension needs a purely imaginary t=0 slice "
                             f"(max |Re| = {real:.3e}); data or coefficients are not real")
        w0 = 1j * w0.imag
    mirrored = sign * np.conj(traj.values[:0:-1])
    values = np.concatenate([mirrored, w0[None], traj.values[1:]])
    times = np.concatenate([-traj.times[:0:-1], [0.0], traj.times[1:]])
    return TwoStateTrajectory(traj.grid, times, values)


# -- text exports ------------------------------------------------------------------

def format_trajectory(traj: TwoStateTrajectory) -> str:
    buf = io.StringIO()
    buf.write("# t node re_uplus im_uplus re_uminus im_uminus\n")
    for t, frame in zip(traj.times, traj.values):
        for n in range(traj.grid.size):
            a, b = frame[0, n], frame[1, n]
            buf.write(f"{t:.17g} {n} {a.real:.17g} {a.imag:.17g} {b.real:.17g} {b.imag:.17g}\n")
    return buf.getvalue()


def format_observation(obs: ObservationTrace) -> str:
    buf = io.StringIO()
    buf.write("# t node re_dnu_dt_uplus im_dnu_dt_uplus re_dnu_dt_uminus im_dnu_dt_uminus\n")
    for t, frame in zip(obs.times, obs.values):
        for j, node in enumerate(obs.nodes):
            a, b = frame[0, j], frame[1, j]
            buf.write(f"{t:.17g} {node} {a.real:.17g} {a.imag:.17g} {b.real:.17g} {b.imag:.17g}\n")
    return buf.getvalue()


def write_trajectory(path: Union[str, Path], traj: TwoStateTrajectory) -> None:
    Path(path).write_text(format_trajectory(traj))


def write_observation(path: Union[str, Path], obs: ObservationTrace) -> None:
    Path(path).write_text(format_observation(obs))
