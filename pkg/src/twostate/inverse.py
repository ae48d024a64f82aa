"""Probe protocol, stability-inequality evaluation and linearized reconstruction."""

from __future__ import annotations

import csv
import dataclasses
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_banded

from .carleman import WeightConfig, build_weights
from .coefficients import CoefficientSet, sample_perturbation
from .forward import (BoundaryData, TwoStateField, TwoStateTrajectory, assemble_hamiltonian,
                      compatibility_boundary_data, observe, regularity_index, solve_ibvp, time_grid)
from .geometry import ObservationBoundary, SpatialGrid, boundary_l2_norm, l2_norm, trapezoid_weights


class ToleranceWarning(UserWarning):
    """A numerical cross-check exceeded its tolerance."""


@dataclass(frozen=True, eq=False)
class ProbeSuite:
    """``n + 2`` real initial states: ``(0, alpha)``, ``(alpha, 0)``, then ``(x_k, x_k)``."""

    grid: SpatialGrid
    baseline: CoefficientSet
    alpha: float
    order: int
    initial: tuple  # of (2, N) arrays
    boundary: tuple  # of BoundaryData, one per probe

    def __len__(self) -> int:
        return len(self.initial)

    def gradient_matrix(self, sign: int = 1) -> np.ndarray:
        """Pointwise ``(grad u0^{+-,k+2})_k`` stacked as (N, n, n); the identity for coordinate probes."""
        from .geometry import gradient_all
        comp = 0 if sign > 0 else 1
        rows = [gradient_all(self.grid, self.initial[k + 2][comp]) for k in range(self.grid.dim)]
        return np.moveaxis(np.stack(rows), -1, 0)

    def boundary_data(self, k: int, times) -> BoundaryData:
        return dataclasses.replace(self.boundary[k], times=np.asarray(times, dtype=float))


def build_probes(grid: SpatialGrid, baseline: CoefficientSet, alpha: float,
                 order: Optional[int] = None, dt: Optional[float] = None) -> ProbeSuite:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    order = regularity_index(grid.dim) if order is None else order
    times = time_grid(grid.domain.T, grid.domain.T if dt is None else dt)
    zero = np.zeros(grid.size)
    const = np.full(grid.size, float(alpha))
    initial = [np.stack([zero, const]), np.stack([const, zero])]
    for k in range(grid.dim):
        xk = grid.coords[:, k].copy()
        initial.append(np.stack([xk, xk]))
    initial = [u.astype(complex) for u in initial]
    boundary = [compatibility_boundary_data(grid, u, baseline, order, times) for u in initial]
    return ProbeSuite(grid, baseline, float(alpha), order, tuple(initial), tuple(boundary))


# -- stability experiment ----------------------------------------------------------

@dataclass
class StabilityReport:
    lhs: float
    rhs_raw: float
    grid_size: int
    dt: float
    amplitude: Optional[float] = None
    seed: Optional[int] = None
    mu_weighted: Optional[float] = None
    per_probe: list = field(default_factory=list)

    @property
    def ratio(self) -> Optional[float]:
        return self.lhs / self.rhs_raw if self.rhs_raw > 0 else None


def coefficient_distance(c1: CoefficientSet, c2: CoefficientSet) -> float:
    """Squared L2 distance summed over A, p, q+ and q-."""
    d = c1 - c2
    return sum(l2_norm(c1.grid, v) ** 2 for v in (d.A, d.p, d.qplus, d.qminus))


def solve_probe(grid: SpatialGrid, coeffs: CoefficientSet, probes: ProbeSuite, k: int, dt: float,
                T: Optional[float] = None) -> TwoStateTrajectory:
    times = time_grid(grid.domain.T if T is None else T, dt)
    return solve_ibvp(grid, coeffs, probes.initial[k], probes.boundary_data(k, times), dt)


def weighted_trace_norm(cfg: WeightConfig, s: float, grid: SpatialGrid, values: np.ndarray,
                        times: np.ndarray, gammastar: ObservationBoundary) -> float:
    """``||e^{-s eta} phi^{1/2} (d_nu beta)^{1/2} f||^2`` over Gamma_* x (-T, T), as twice the (0, T) part."""
    inside = times < cfg.T
    w = build_weights(grid, cfg, times[inside])
    sel = gammastar.trace_nodes
    dnu = np.clip(np.einsum("ij,ji->i", gammastar.trace_normals, w.grad_beta[:, sel]), 0.0, None)
    weight = np.zeros((len(times), len(sel)))
    weight[inside] = np.exp(-s * w.eta[:, sel]) * np.sqrt(w.phi[:, sel] * dnu)
    vals = values * (weight[:, None, :] if values.ndim == 3 else weight)
    return 2.0 * boundary_l2_norm(gammastar, vals, trapezoid_weights(times)) ** 2


def run_pair_experiment(grid: SpatialGrid, coeffs1: CoefficientSet, coeffs2: CoefficientSet,
                        probes: ProbeSuite, dt: float, gammastar: ObservationBoundary,
                        weight_cfg: Optional[WeightConfig] = None, s: float = 1.0,
                        amplitude: Optional[float] = None, seed: Optional[int] = None) -> StabilityReport:
    """Both sides of the Lipschitz stability inequality for one coefficient pair.

    ``rhs_raw`` is the unweighted squared trace norm over Gamma_* x (0, T),
    summed over probes and components.
    """
    lhs = coefficient_distance(coeffs1, coeffs2)
    rhs, mu, per_probe = 0.0, 0.0, []
    for k in range(len(probes)):
        t1 = solve_probe(grid, coeffs1, probes, k, dt)
        t2 = solve_probe(grid, coeffs2, probes, k, dt)
        diff = observe(t1, gammastar) - observe(t2, gammastar)
        tw = trapezoid_weights(diff.times)
        part = sum(boundary_l2_norm(gammastar, diff.values[:, c], tw) ** 2 for c in (0, 1))
        per_probe.append(part)
        rhs += part
        if weight_cfg is not None:
            mu += weighted_trace_norm(weight_cfg, s, grid, diff.values, diff.times, gammastar)
    return StabilityReport(lhs, rhs, grid.size, dt, amplitude, seed,
                           mu if weight_cfg is not None else None, per_probe)


def stability_scaling_study(grid: SpatialGrid, baseline: CoefficientSet, amplitudes: Sequence[float],
                            seeds: Sequence[int], probes: ProbeSuite, dt: float,
                            gammastar: ObservationBoundary) -> list[StabilityReport]:
    """One report per (amplitude, seed); the pair is (baseline + perturbation, baseline)."""
    amplitudes = list(amplitudes)
    if any(a < 0 for a in amplitudes) or amplitudes != sorted(amplitudes):
        raise ValueError("amplitudes must be nonnegative and sorted")
    out = []
    for a in amplitudes:
        for seed in seeds:
            c1 = sample_perturbation(baseline, a, seed).perturbed()
            out.append(run_pair_experiment(grid, c1, baseline, probes, dt, gammastar,
                                           amplitude=a, seed=seed))
    return out


def summarize_ratios(reports: Sequence[StabilityReport]) -> dict:
    """Per-seed spread ``max ratio / min ratio`` across amplitudes, ignoring undefined ratios."""
    by_seed: dict = {}
    for r in reports:
        if r.ratio is not None:
            by_seed.setdefault(r.seed, []).append(r.ratio)
    return {seed: max(v) / min(v) for seed, v in by_seed.items()}


STABILITY_COLUMNS = ["seed", "amplitude", "lhs", "rhs_raw", "ratio", "grid", "dt"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def format_stability_csv(reports: Sequence[StabilityReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STABILITY_COLUMNS)
    for r in reports:
        writer.writerow([_fmt(r.seed), _fmt(r.amplitude), _fmt(r.lhs), _fmt(r.rhs_raw), _fmt(r.ratio),
                         _fmt(r.grid_size), _fmt(r.dt)])
    return buf.getvalue()


def write_stability_csv(path: Union[str, Path], reports: Sequence[StabilityReport]) -> None:
    Path(path).write_text(format_stability_csv(reports))


# -- linearized reconstruction -----------------------------------------------------

def snapshot_v0(grid: SpatialGrid, coeffs1: CoefficientSet, coeffs2: CoefficientSet, probes: ProbeSuite,
                k: int, dt: float) -> TwoStateField:
    """``d/dt (u1 - u2)`` at t = 0 from the one-sided three-point difference."""
    t1 = solve_probe(grid, coeffs1, probes, k, dt, T=2 * dt)
    t2 = solve_probe(grid, coeffs2, probes, k, dt, T=2 * dt)
    w = t1.values - t2.values
    if w.shape[0] < 3:
        raise ValueError("need at least 3 time nodes")
    v = (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * dt)
    return TwoStateField(v[0], v[1])


def _uncouple_average(grid: SpatialGrid, values: np.ndarray, axis: int) -> np.ndarray:
    """Invert ``a -> (a + mean of the two axis neighbours) / 2`` with zero boundary values.

    The skew-form coupling applied to ``x_k`` returns this average of ``A_k``
    rather than ``A_k`` itself; the solve is tridiagonal along ``axis``.
    """
    arr = np.moveaxis(grid.as_array(values), axis, -1)
    n = arr.shape[-1]
    m = n - 2
    if m < 1:
        return values
    ab = np.zeros((3, m))
    ab[0, 1:] = 0.25
    ab[1, :] = 0.5
    ab[2, :-1] = 0.25
    rhs = arr[..., 1:-1].reshape(-1, m).T
    sol = solve_banded((1, 1), ab, rhs)
    out = np.zeros_like(arr)
    out[..., 1:-1] = sol.T.reshape(arr[..., 1:-1].shape)
    return grid.flat(np.moveaxis(out, -1, axis))


@dataclass
class ReconstructionResult:
    grid: SpatialGrid
    A: np.ndarray  # (dim, N)
    p: np.ndarray
    qplus: np.ndarray
    qminus: np.ndarray
    p_cross: np.ndarray
    A_cross: np.ndarray
    imag_residual: dict
    cross_check: dict
    errors: dict = field(default_factory=dict)
    consistent: bool = True

    def as_coefficients(self, M: float) -> CoefficientSet:
        return CoefficientSet(self.grid, self.A, self.p, self.qplus, self.qminus, M)


def _rel(a: np.ndarray, b: np.ndarray, grid: SpatialGrid) -> float:
    nb = l2_norm(grid, b)
    diff = l2_norm(grid, a - b)
    return diff / nb if nb > 0 else diff


def _imag_ratio(grid: SpatialGrid, z: np.ndarray, floor: float = 0.0) -> float:
    re = max(l2_norm(grid, z.real), floor)
    im = l2_norm(grid, z.imag)
    return im / re if re > 0 else im


def linearized_reconstruct(grid: SpatialGrid, snapshots: Sequence, probes: ProbeSuite,
                           average_correction: bool = True, tol: float = 1e-3) -> ReconstructionResult:
    """Pointwise inversion of ``v(., 0) = -i (delta H) u0`` for the probe design.

    ``snapshots[k]`` is the initial time derivative of ``u1 - u2`` for probe ``k``.
    """
    if len(snapshots) != len(probes):
        raise ValueError(f"got {len(snapshots)} snapshots for {len(probes)} probes")
    alpha = probes.alpha
    if np.min(np.abs(probes.initial[0][1])) < alpha or np.min(np.abs(probes.initial[1][0])) < alpha:
        raise ValueError("constant probes fall below alpha somewhere")
    v = [np.asarray(s.stacked() if isinstance(s, TwoStateField) else s) for s in snapshots]

    raw = {
        "p": 1j / alpha * v[0][0],
        "qminus": 1j / alpha * v[0][1],
        "qplus": 1j / alpha * v[1][0],
        "p_cross": 1j / alpha * v[1][1],
    }
    A_raw, A_cross_raw = [], []
    for k in range(grid.dim):
        xk = grid.coords[:, k]
        plus = 1j * v[k + 2][0] - (raw["p"] + raw["qplus"]) * xk
        minus = -(1j * v[k + 2][1] - (raw["p"] + raw["qminus"]) * xk)
        A_raw += [plus]
        A_cross_raw += [minus]

    # fields whose true difference vanishes (A in 1D) are compared against the
    # overall size of the recovered perturbation rather than their own size
    floor = max(l2_norm(grid, val.real) for val in raw.values())
    imag = {name: _imag_ratio(grid, val, floor) for name, val in raw.items()}
    for k in range(grid.dim):
        imag[f"A{k + 1}"] = _imag_ratio(grid, A_raw[k], floor)

    A = np.stack([a.real for a in A_raw])
    A_cross = np.stack([a.real for a in A_cross_raw])
    if average_correction:
        A = np.stack([_uncouple_average(grid, A[k], k) for k in range(grid.dim)])
        A_cross = np.stack([_uncouple_average(grid, A_cross[k], k) for k in range(grid.dim)])

    p, p_cross = raw["p"].real, raw["p_cross"].real
    scale = max(l2_norm(grid, p), l2_norm(grid, p_cross))
    cross = {"p": l2_norm(grid, p - p_cross) / scale if scale > 0 else 0.0}
    for k in range(grid.dim):
        s = max(l2_norm(grid, A[k]), l2_norm(grid, A_cross[k]), floor)
        cross[f"A{k + 1}"] = l2_norm(grid, A[k] - A_cross[k]) / s if s > 0 else 0.0

    consistent = all(val <= tol for val in cross.values())
    if not consistent:
        warnings.warn(f"reconstruction cross-checks exceed {tol:g}: {cross}; the discretization is "
                      f"too coarse for the perturbation", ToleranceWarning, stacklevel=2)
    return ReconstructionResult(grid, A, p, raw["qplus"].real, raw["qminus"].real, p_cross, A_cross,
                                imag, cross, consistent=consistent)


def reconstruction_errors(result: ReconstructionResult, truth: CoefficientSet) -> dict:
    """Relative L2 error per field against the true coefficient difference.

    A field whose true difference vanishes gets its absolute error instead.
    """
    grid = result.grid
    errs = {"p": _rel(result.p, truth.p, grid), "qplus": _rel(result.qplus, truth.qplus, grid),
            "qminus": _rel(result.qminus, truth.qminus, grid)}
    for k in range(grid.dim):
        errs[f"A{k + 1}"] = _rel(result.A[k], truth.A[k], grid)
    result.errors = errs
    return errs


def reconstruct_pair(grid: SpatialGrid, coeffs1: CoefficientSet, coeffs2: CoefficientSet,
                     probes: ProbeSuite, dt: float, **kwargs) -> ReconstructionResult:
    snaps = [snapshot_v0(grid, coeffs1, coeffs2, probes, k, dt) for k in range(len(probes))]
    result = linearized_reconstruct(grid, snaps, probes, **kwargs)
    reconstruction_errors(result, coeffs1 - coeffs2)
    return result


def format_error_summary(result: ReconstructionResult) -> str:
    parts = [f"{k}={v:.6e}" for k, v in result.errors.items()]
    parts += [f"cross_{k}={v:.6e}" for k, v in result.cross_check.items()]
    return "# errors " + " ".join(parts) + "\n"


# -- discrete linearized system ----------------------------------------------------

def staggered_difference(traj: TwoStateTrajectory) -> TwoStateTrajectory:
    """``(w^{n+1} - w^n) / dt`` placed at the half-step times."""
    d = np.diff(traj.values, axis=0) / np.diff(traj.times)[:, None, None]
    mid = 0.5 * (traj.times[1:] + traj.times[:-1])
    return TwoStateTrajectory(traj.grid, mid, d)


def linearized_residual(grid: SpatialGrid, coeffs1: CoefficientSet, coeffs2: CoefficientSet,
                        v: TwoStateTrajectory, du2: TwoStateTrajectory) -> np.ndarray:
    """Interior residual of the trapezoidal scheme for the differentiated difference system.

    ``-i (v^{n+1} - v^n) / dt + H1 avg(v) + (H1 - H2) avg(du2)``, one row per step.
    """
    H1 = assemble_hamiltonian(grid, coeffs1)
    dH = H1.full - assemble_hamiltonian(grid, coeffs2).full
    dt = np.diff(v.times)
    vf = v.values.reshape(len(v.times), -1)
    uf = du2.values.reshape(len(du2.times), -1)
    avg_v = 0.5 * (vf[1:] + vf[:-1])
    avg_u = 0.5 * (uf[1:] + uf[:-1])
    res = -1j * (vf[1:] - vf[:-1]) / dt[:, None] + (H1.full @ avg_v.T).T + (dH @ avg_u.T).T
    out = np.zeros_like(res)
    out[:, H1.dofs] = res[:, H1.dofs]
    return out.reshape(-1, 2, grid.size)
