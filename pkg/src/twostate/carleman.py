"""Carleman weights, conjugated operators and the weighted energy estimate."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import CounterexampleCandidate
from .geometry import (ObservationBoundary, SpatialGrid, central_difference, gradient_all, laplacian,
                       neumann_trace)


@dataclass(frozen=True)
class WeightConfig:
    x0: tuple
    r: float = 1.5
    lam: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not self.r > 1:
            raise ValueError(f"r must exceed 1, got {self.r}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")


def cell_centered_times(T: float, cells: int) -> np.ndarray:
    """Midpoints of ``cells`` equal cells of (-T, T); odd ``cells`` puts a node at t = 0."""
    if cells < 1:
        raise ValueError("need at least one time cell")
    dt = 2.0 * T / cells
    return -T + dt * (np.arange(cells) + 0.5)


@dataclass(frozen=True, eq=False)
class CarlemanWeights:
    grid: SpatialGrid
    cfg: WeightConfig
    times: np.ndarray
    beta_tilde: np.ndarray
    beta: np.ndarray
    K: float
    grad_beta: np.ndarray  # (dim, N)
    phi: np.ndarray  # (nt, N)
    eta: np.ndarray  # (nt, N)
    grad_eta: np.ndarray  # (nt, dim, N)
    lap_eta: np.ndarray  # (nt, N)
    deta_dt: np.ndarray  # (nt, N)
    time_weights: np.ndarray = field(repr=False)

    @property
    def eta_min(self) -> float:
        return float(self.eta.min())

    def zero_index(self) -> int:
        hits = np.flatnonzero(np.abs(self.times) <= 1e-12 * self.cfg.T)
        if len(hits) != 1:
            raise ValueError("time grid has no node at t = 0; use an odd number of cells")
        return int(hits[0])

    def damping(self, s: float) -> np.ndarray:
        """``exp(-s (eta - eta_min))``: the weight ``exp(-s eta)`` up to a common factor."""
        return np.exp(-s * (self.eta - self.eta_min))


def build_weights(grid: SpatialGrid, cfg: WeightConfig, times) -> CarlemanWeights:
    times = np.asarray(times, dtype=float)
    T = cfg.T
    if np.any(np.abs(times) >= T):
        raise ValueError("time nodes must lie strictly inside (-T, T)")
    x0 = np.asarray(cfg.x0)
    if x0.shape != (grid.dim,):
        raise ValueError(f"x0 must have {grid.dim} coordinates")
    if grid.domain.contains_closure(x0):
        raise ValueError("x0 must lie outside the closed domain")

    diff = grid.coords - x0  # (N, dim)
    beta_tilde = np.sum(diff**2, axis=1)
    beta = beta_tilde + cfg.r * float(np.max(np.abs(beta_tilde)))
    K = float(beta.max())
    lam = cfg.lam
    grad_beta = 2.0 * diff.T
    grad_sq = np.sum(grad_beta**2, axis=0)

    denom = (T + times) * (T - times)  # (nt,)
    inv = 1.0 / denom[:, None]
    e1 = np.exp(lam * beta)
    e2K = np.exp(2.0 * lam * K)
    phi = np.exp(2.0 * lam * beta)[None, :] * inv
    eta = (e2K - e1)[None, :] * inv
    grad_eta = -(lam * e1 * grad_beta)[None, :, :] * inv[:, :, None]
    lap_eta = -(lam**2 * e1 * grad_sq + lam * e1 * 2.0 * grid.dim)[None, :] * inv
    deta_dt = (e2K - e1)[None, :] * (2.0 * times / denom**2)[:, None]
    tw = np.full(len(times), 2.0 * T / len(times))
    return CarlemanWeights(grid, cfg, times, beta_tilde, beta, K, grad_beta, phi, eta, grad_eta,
                           lap_eta, deta_dt, tw)


@dataclass(frozen=True)
class Assumption1Report:
    min_gradient: float
    gradient_bound: float
    max_exit_derivative: float  # max of d_nu beta_tilde over the boundary outside Gamma_*
    convexity_margin: float
    lam: float

    @property
    def passed(self) -> bool:
        return (self.min_gradient >= self.gradient_bound > 0
                and self.max_exit_derivative < 0
                and self.convexity_margin >= 2.0 - 1e-6)


def verify_assumption1(grid: SpatialGrid, cfg: WeightConfig, gammastar: ObservationBoundary,
                       samples: int = 10_000, seed=0) -> Assumption1Report:
    x0 = np.asarray(cfg.x0)
    diff = grid.coords - x0
    grad = 2.0 * diff
    norms = np.linalg.norm(grad, axis=1)
    bound = 2.0 * grid.domain.distance_to_closure(x0)

    outside = np.setdiff1d(grid.boundary, gammastar.nodes)
    if len(outside):
        pos = np.searchsorted(grid.boundary, outside)
        dnu = np.einsum("ij,ij->i", grad[outside], grid.normals[pos])
        exit_max = float(dnu.max())
    else:
        exit_max = -np.inf

    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal((samples, grid.dim))
    zeta /= np.linalg.norm(zeta, axis=1, keepdims=True)
    hessian = 2.0 * np.eye(grid.dim)
    curvature = np.einsum("ki,ij,kj->k", zeta, hessian, zeta)
    margin = np.inf
    for start in range(0, samples, 1000):
        z = zeta[start:start + 1000]
        proj = (z @ grad.T) ** 2  # (batch, N)
        vals = cfg.lam * proj + curvature[start:start + 1000, None]
        margin = min(margin, float(vals.min()))
    return Assumption1Report(float(norms.min()), bound, exit_max, margin, cfg.lam)


# -- conjugated operators ----------------------------------------------------------

def _check_field(weights: CarlemanWeights, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w)
    nt, N = len(weights.times), weights.grid.size
    if w.shape[0] != nt or w.shape[-1] != N or w.ndim not in (2, 3):
        raise ValueError(f"field shape {w.shape} does not match (nt={nt}, [2,] N={N})")
    return w


def _bcast(weights_field: np.ndarray, w: np.ndarray) -> np.ndarray:
    # (nt, N) -> (nt, 1, N) when w carries a component axis
    return weights_field[:, None, :] if w.ndim == 3 else weights_field


def _apply_space(op, w: np.ndarray) -> np.ndarray:
    flat = w.reshape(-1, w.shape[-1])
    return (op @ flat.T).T.reshape(w.shape)


def _dt(weights: CarlemanWeights, w: np.ndarray) -> np.ndarray:
    return np.gradient(w, weights.times, axis=0, edge_order=2)


def _interior_only(weights: CarlemanWeights, w: np.ndarray) -> np.ndarray:
    out = np.array(w, copy=True)
    out[..., weights.grid.boundary] = 0.0
    return out


def apply_L(weights: CarlemanWeights, w) -> np.ndarray:
    """``i d/dt + Laplacian`` at interior nodes."""
    w = _check_field(weights, w)
    out = 1j * _dt(weights, w) + _apply_space(laplacian(weights.grid), w)
    return _interior_only(weights, out)


def apply_M1(weights: CarlemanWeights, s: float, w) -> np.ndarray:
    w = _check_field(weights, w)
    grad_sq = np.sum(weights.grad_eta**2, axis=1)
    out = 1j * _dt(weights, w) + _apply_space(laplacian(weights.grid), w) + s**2 * _bcast(grad_sq, w) * w
    return _interior_only(weights, out)


def apply_M2(weights: CarlemanWeights, s: float, w) -> np.ndarray:
    w = _check_field(weights, w)
    out = 1j * s * _bcast(weights.deta_dt, w) * w + s * _bcast(weights.lap_eta, w) * w
    for k in range(weights.grid.dim):
        dk = _apply_space(central_difference(weights.grid, k), w)
        out = out + 2.0 * s * _bcast(weights.grad_eta[:, k, :], w) * dk
    return _interior_only(weights, out)


def conjugation_residual(weights: CarlemanWeights, s: float, z, Lz) -> float:
    """Relative space-time L2 size of ``(M1 + M2)(e^{-s eta} z) - e^{-s eta} L z``.

    Both terms carry the common factor ``exp(s eta_min)``, which cancels in the ratio.
    """
    z = _check_field(weights, z)
    damp = _bcast(weights.damping(s), z)
    w = damp * z
    lhs = apply_M1(weights, s, w) + apply_M2(weights, s, w)
    rhs = _interior_only(weights, damp * np.asarray(Lz))
    ref = _qnorm(weights, rhs)
    return _qnorm(weights, lhs - rhs) / ref if ref > 0 else _qnorm(weights, lhs - rhs)


def _qnorm_sq(weights: CarlemanWeights, f: np.ndarray) -> float:
    sq = np.abs(f) ** 2
    tw = weights.time_weights.reshape((-1,) + (1,) * (sq.ndim - 1))
    return float(np.sum(sq * weights.grid.weights * tw))


def _qnorm(weights: CarlemanWeights, f: np.ndarray) -> float:
    return float(np.sqrt(_qnorm_sq(weights, f)))


# -- weighted energy estimate ------------------------------------------------------

class CorollarySides(NamedTuple):
    lhs: float
    rhs: float


def corollary_check(weights: CarlemanWeights, s: float, z, Lz, gammastar: ObservationBoundary,
                    tol: float = 1e-12) -> CorollarySides:
    """Both sides of the weighted estimate, each multiplied by ``exp(2 s eta_min)``.

    The common factor keeps the numbers representable; ``lhs / rhs`` is unchanged.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    z = _check_field(weights, z)
    Lz = np.asarray(Lz)
    grid = weights.grid
    damp = weights.damping(s)
    dz = _bcast(damp, z)

    dnu_beta = np.einsum("ij,ji->i", gammastar.trace_normals, weights.grad_beta[:, gammastar.trace_nodes])
    if np.any(dnu_beta < -tol):
        raise ValueError("negative normal derivative of beta on the observation boundary; "
                         "observation set and x0 are inconsistent")
    dnu_beta = np.clip(dnu_beta, 0.0, None)

    grad_z = gradient_all(grid, z)  # (nt, [2,] dim, N)
    grad_weight = damp[:, None, None, :] if z.ndim == 3 else damp[:, None, :]
    k0 = weights.zero_index()

    lhs = s**-0.5 * (_qnorm_sq(weights, dz * z) + _qnorm_sq(weights, grad_weight * grad_z))
    lhs += float(np.sum(np.abs(damp[k0] * z[k0]) ** 2 * grid.weights))

    trace = neumann_trace(z, gammastar)  # (nt, [2,] n_trace)
    sel = gammastar.trace_nodes
    bw = damp[:, sel] * np.sqrt(weights.phi[:, sel] * dnu_beta[None, :])
    bw = bw[:, None, :] if z.ndim == 3 else bw
    tw = weights.time_weights.reshape((-1,) + (1,) * (trace.ndim - 1))
    boundary = float(np.sum(np.abs(bw * trace) ** 2 * gammastar.weights * tw))
    source = _qnorm_sq(weights, dz * Lz)
    rhs = s**-1.5 * (s * boundary + source)
    return CorollarySides(lhs, rhs)


class TestField(NamedTuple):
    z: np.ndarray  # (nt, 2, N)
    Lz: np.ndarray


def smooth_test_field(grid: SpatialGrid, times, seed, modes: int = 3) -> TestField:
    """Seeded sum of Dirichlet sine modes with complex quadratic time coefficients.

    ``L z`` is returned in closed form, so the pair is an exact oracle.
    """
    times = np.asarray(times, dtype=float)
    rng = np.random.default_rng(seed)
    lo = np.asarray(grid.domain.lo)
    width = np.asarray(grid.domain.hi) - lo
    s01 = (grid.coords - lo) / width
    z = np.zeros((len(times), 2, grid.size), dtype=complex)
    Lz = np.zeros_like(z)
    for comp in range(2):
        for _ in range(modes):
            m = rng.integers(1, 4, size=grid.dim)
            shape = np.prod(np.sin(np.pi * m * s01), axis=1)
            mu = float(np.sum((np.pi * m / width) ** 2))
            a, b, c = (rng.standard_normal(3) + 1j * rng.standard_normal(3)) / float(np.sum(m)) ** 2
            ct = a + b * times + c * times**2
            dct = b + 2.0 * c * times
            z[:, comp] += ct[:, None] * shape[None, :]
            Lz[:, comp] += (1j * dct - mu * ct)[:, None] * shape[None, :]
    return TestField(z, Lz)


def smooth_test_family(grid: SpatialGrid, times, count: int, seed, modes: int = 3) -> list[TestField]:
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [smooth_test_field(grid, times, sq, modes) for sq in seeds]


class ScanRow(NamedTuple):
    s: float
    worst_ratio: float
    argmax_member_id: int


def empirical_constant_scan(weights: CarlemanWeights, family: Sequence, s_grid: Sequence[float],
                            gammastar: ObservationBoundary) -> list[ScanRow]:
    """Worst ``lhs / rhs`` over the family for each ``s``."""
    if len(family) == 0:
        raise ValueError("empty test-field family")
    rows = []
    for s in s_grid:
        worst, arg = -np.inf, -1
        for k, member in enumerate(family):
            z, Lz = member
            lhs, rhs = corollary_check(weights, s, z, Lz, gammastar)
            if rhs == 0:
                if lhs > 0:
                    raise CounterexampleCandidate(f"member {k} at s={s}: rhs = 0 with lhs = {lhs:.3e}")
                raise ValueError(f"member {k} is identically zero; excluded from the scan")
            ratio = lhs / rhs
            if ratio > worst:
                worst, arg = ratio, k
        rows.append(ScanRow(float(s), float(worst), arg))
    return rows


def format_scan_csv(rows: Sequence[ScanRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s", "worst_ratio", "argmax_member_id"])
    for row in rows:
        writer.writerow([f"{row.s:.17g}", f"{row.worst_ratio:.17g}", row.argmax_member_id])
    return buf.getvalue()


def write_scan_csv(path: Union[str, Path], rows: Sequence[ScanRow]) -> None:
    Path(path).write_text(format_scan_csv(rows))
