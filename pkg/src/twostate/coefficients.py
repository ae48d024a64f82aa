"""Admissible coefficient sets (A, p, q+, q-) and seeded perturbations of a baseline."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .geometry import SpatialGrid

TOL_DIV = 1e-10
TOL_TRACE = 1e-2


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    grid: SpatialGrid
    A: np.ndarray  # (dim, N)
    p: np.ndarray
    qplus: np.ndarray
    qminus: np.ndarray
    M: float

    def __post_init__(self):
        n = self.grid.size
        A = np.asarray(self.A, dtype=float).reshape(self.grid.dim, n)
        object.__setattr__(self, "A", A)
        for name in ("p", "qplus", "qminus"):
            value = np.asarray(getattr(self, name))
            if np.iscomplexobj(value):
                raise TypeError(f"{name} must be real-valued")
            object.__setattr__(self, name, np.broadcast_to(value.astype(float), (n,)).copy())
        if np.iscomplexobj(self.A):
            raise TypeError("A must be real-valued")

    def fields(self) -> dict[str, np.ndarray]:
        out = {f"A{k + 1}": self.A[k] for k in range(self.grid.dim)}
        out.update(p=self.p, qplus=self.qplus, qminus=self.qminus)
        return out

    def sup_norms(self) -> dict[str, float]:
        return {
            "A": float(np.max(np.linalg.norm(self.A, axis=0))),
            "p": float(np.max(np.abs(self.p))),
            "qplus": float(np.max(np.abs(self.qplus))),
            "qminus": float(np.max(np.abs(self.qminus))),
        }

    def __sub__(self, other: "CoefficientSet") -> "CoefficientSet":
        return CoefficientSet(self.grid, self.A - other.A, self.p - other.p,
                              self.qplus - other.qplus, self.qminus - other.qminus, self.M)

    @classmethod
    def zero(cls, grid: SpatialGrid, M: float = 1.0) -> "CoefficientSet":
        z = np.zeros(grid.size)
        return cls(grid, np.zeros((grid.dim, grid.size)), z, z, z, M)


def discrete_divergence(grid: SpatialGrid, A: np.ndarray) -> np.ndarray:
    """Centered divergence at interior nodes (zero on the boundary)."""
    A = np.asarray(A).reshape(grid.dim, grid.size)
    div = np.zeros(grid.size)
    inner = grid.interior
    for k in range(grid.dim):
        stride = int(np.prod(grid.shape[k + 1:]))
        div[inner] += (A[k, inner + stride] - A[k, inner - stride]) / (2.0 * grid.h[k])
    return div


def make_divergence_free(grid: SpatialGrid, value=None,
                         stream_function: Optional[Callable] = None) -> np.ndarray:
    """Divergence-free vector field on ``grid``.

    1D accepts only a constant ``value``. In 2D ``A = (d2 psi, -d1 psi)`` is
    formed with centered differences of ``stream_function`` sampled on the
    ghost-extended grid, so the centered discrete divergence cancels to
    round-off.
    """
    if grid.dim == 1:
        if stream_function is not None:
            raise ValueError("a nonconstant divergence-free field does not exist in 1D")
        arr = np.broadcast_to(np.asarray(0.0 if value is None else value, dtype=float), (grid.size,))
        if np.ptp(arr) != 0.0:
            raise ValueError("a nonconstant divergence-free field does not exist in 1D")
        return arr.reshape(1, -1).copy()

    if stream_function is None:
        if value is None:
            return np.zeros((2, grid.size))
        raise ValueError("2D fields are built from a stream function")
    gx, gy = grid.ghost_axes()
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    psi = np.asarray(stream_function(X, Y), dtype=float)
    h1, h2 = grid.h
    A1 = (psi[1:-1, 2:] - psi[1:-1, :-2]) / (2.0 * h2)
    A2 = -(psi[2:, 1:-1] - psi[:-2, 1:-1]) / (2.0 * h1)
    return np.stack([A1.ravel(), A2.ravel()])


# -- smooth seeded fields ----------------------------------------------------------

def _unit(grid: SpatialGrid, k: int, x):
    lo, hi = grid.domain.lo[k], grid.domain.hi[k]
    return (x - lo) / (hi - lo)


def fourier_field(grid: SpatialGrid, seed, order: int = 3) -> Callable:
    """Seeded low-order trigonometric sum, returned as a vectorized callable."""
    rng = np.random.default_rng(seed)
    modes = np.arange(order + 1)
    decay = 1.0 / (1.0 + modes) ** 2
    if grid.dim == 1:
        a = rng.standard_normal(order + 1) * decay
        b = rng.standard_normal(order + 1) * decay

        def f(x):
            s = _unit(grid, 0, np.asarray(x, dtype=float))[..., None] * math.pi * modes
            return np.cos(s) @ a + np.sin(s) @ b
        return f

    coef = rng.standard_normal((4, order + 1, order + 1)) * np.outer(decay, decay)

    def f(x, y):
        sx = _unit(grid, 0, np.asarray(x, dtype=float))[..., None] * math.pi * modes
        sy = _unit(grid, 1, np.asarray(y, dtype=float))[..., None] * math.pi * modes
        cx, snx, cy, sny = np.cos(sx), np.sin(sx), np.cos(sy), np.sin(sy)
        out = 0.0
        for c, bx, by in ((coef[0], cx, cy), (coef[1], cx, sny), (coef[2], snx, cy), (coef[3], snx, sny)):
            out = out + np.einsum("...k,kl,...l->...", bx, c, by)
        return out
    return f


def cutoff_function(grid: SpatialGrid, power: int = 4, inset: int = 0) -> Callable:
    """Polynomial bump ``prod_k (4 s_k (1 - s_k))**power``: 1 at the centre, zero of order ``power`` on the boundary.

    With ``inset`` > 0 the bump is supported on the box shrunk by that many
    cells and is zero outside it.
    """
    def chi(*xs):
        out = 1.0
        for k, x in enumerate(xs):
            lo, hi = grid.domain.lo[k], grid.domain.hi[k]
            a, b = lo + inset * grid.h[k], hi - inset * grid.h[k]
            s = np.clip((np.asarray(x, dtype=float) - a) / (b - a), 0.0, 1.0)
            out = out * (4.0 * s * (1.0 - s)) ** power
        return out
    return chi


# -- admissibility -----------------------------------------------------------------

@dataclass
class AdmissibilityReport:
    sup_norms: dict
    M: float
    divergence_residual: float
    divergence_tolerance: float
    trace_value_residual: float
    trace_difference_residual: float
    trace_tolerance: float

    @property
    def sup_ok(self) -> bool:
        return all(v <= self.M for v in self.sup_norms.values())

    @property
    def divergence_ok(self) -> bool:
        return self.divergence_residual <= self.divergence_tolerance

    @property
    def trace_ok(self) -> bool:
        return (self.trace_value_residual <= 1e-12 * max(self.M, 1.0)
                and self.trace_difference_residual <= self.trace_tolerance)

    @property
    def passed(self) -> bool:
        return self.sup_ok and self.divergence_ok and self.trace_ok


def _normal_differences(grid: SpatialGrid, values: np.ndarray) -> float:
    arr = grid.as_array(values)
    worst = 0.0
    for k in range(grid.dim):
        a = np.moveaxis(arr, k, 0)
        worst = max(worst, np.max(np.abs(a[1] - a[0])) / grid.h[k],
                    np.max(np.abs(a[-2] - a[-1])) / grid.h[k])
    return float(worst)


def check_admissible(cs: CoefficientSet, baseline: CoefficientSet,
                     tol_div: float = TOL_DIV, tol_trace: float = TOL_TRACE) -> AdmissibilityReport:
    """Diagnose sup-norm bounds, discrete divergence and boundary-trace agreement with ``baseline``.

    Trace agreement is checked on values at boundary nodes and on first
    normal differences there; the latter are ``O(h^3)`` for the cutoff used
    by :func:`sample_perturbation` and are accepted up to ``tol_trace * M``.
    """
    if cs.grid is not baseline.grid and cs.grid.shape != baseline.grid.shape:
        raise ValueError("coefficient sets live on different grids")
    grid = cs.grid
    a_sup = float(np.max(np.linalg.norm(cs.A, axis=0)))
    div = float(np.max(np.abs(discrete_divergence(grid, cs.A))))
    delta = cs - baseline
    value_res = 0.0
    diff_res = 0.0
    for arr in list(delta.A) + [delta.p, delta.qplus, delta.qminus]:
        value_res = max(value_res, float(np.max(np.abs(arr[grid.boundary]))))
        diff_res = max(diff_res, _normal_differences(grid, arr))
    return AdmissibilityReport(
        sup_norms=cs.sup_norms(),
        M=cs.M,
        divergence_residual=div,
        divergence_tolerance=tol_div * a_sup if a_sup > 0 else 1e-14,
        trace_value_residual=value_res,
        trace_difference_residual=diff_res,
        trace_tolerance=tol_trace * cs.M,
    )


@dataclass(frozen=True, eq=False)
class AdmissiblePerturbation:
    baseline: CoefficientSet
    dA: np.ndarray
    dp: np.ndarray
    dqplus: np.ndarray
    dqminus: np.ndarray
    cutoff: np.ndarray

    def perturbed(self) -> CoefficientSet:
        b = self.baseline
        return CoefficientSet(b.grid, b.A + self.dA, b.p + self.dp, b.qplus + self.dqplus,
                              b.qminus + self.dqminus, b.M)

    def delta(self) -> CoefficientSet:
        b = self.baseline
        return CoefficientSet(b.grid, self.dA, self.dp, self.dqplus, self.dqminus, b.M)


def _unit_shapes(grid: SpatialGrid, seed, order: int, power: int):
    chi = cutoff_function(grid, power)
    ss = np.random.SeedSequence(seed)
    seeds = ss.spawn(4)
    shapes = []
    for child in seeds[:3]:
        f = fourier_field(grid, child, order)
        values = grid.evaluate(lambda *xs: chi(*xs) * f(*xs))
        shapes.append(values / np.max(np.abs(values)))
    if grid.dim == 1:
        dA = np.zeros((1, grid.size))
    else:
        # stream function vanishes on ghost, boundary and first inward nodes,
        # so the centered curl is exactly zero on the boundary
        chi_psi = cutoff_function(grid, power, inset=1)
        f = fourier_field(grid, seeds[3], order)
        dA = make_divergence_free(grid, stream_function=lambda x, y: chi_psi(x, y) * f(x, y))
        dA = dA / np.max(np.linalg.norm(dA, axis=0))
    return dA, shapes, grid.evaluate(chi)


def sample_perturbation(baseline: CoefficientSet, amplitude: float, seed,
                        order: int = 3, power: int = 4) -> AdmissiblePerturbation:
    """Seeded cutoff-masked perturbation with every delta field of sup-norm ``amplitude``.

    In 1D the vector potential is constant, so trace agreement forces its
    perturbation to vanish.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    grid = baseline.grid
    dA, (sp_, sq_plus, sq_minus), chi = _unit_shapes(grid, seed, order, power)
    pert = AdmissiblePerturbation(baseline, amplitude * dA, amplitude * sp_, amplitude * sq_plus,
                                  amplitude * sq_minus, chi)
    sup = pert.perturbed().sup_norms()
    over = {k: v for k, v in sup.items() if v > baseline.M}
    if over:
        raise ValueError(f"amplitude {amplitude} pushes sup-norms past M={baseline.M}: {over}")
    return pert


def sample_admissible_perturbation(baseline: CoefficientSet, amplitude: float, seed) -> CoefficientSet:
    return sample_perturbation(baseline, amplitude, seed).perturbed()


def make_baseline(grid: SpatialGrid, M: float, A0: float = 0.0, p0: float = 0.0,
                  qplus0: float = 0.0, qminus0: float = 0.0, variation: float = 0.0,
                  seed=0) -> CoefficientSet:
    """Constant levels plus an optional smooth seeded variation (not masked at the boundary).

    In 2D ``A0`` scales the stream function ``sin(pi s1) sin(pi s2)``.
    """
    ss = np.random.SeedSequence(seed).spawn(3)
    fields = []
    for level, child in zip((p0, qplus0, qminus0), ss):
        f = fourier_field(grid, child, 2)
        values = grid.evaluate(f)
        scale = np.max(np.abs(values))
        fields.append(level + (variation * values / scale if variation else 0.0))
    if grid.dim == 1:
        A = make_divergence_free(grid, A0)
    else:
        def psi(x, y):
            sx, sy = _unit(grid, 0, x), _unit(grid, 1, y)
            return A0 * np.sin(math.pi * sx) * np.sin(math.pi * sy) / math.pi
        A = make_divergence_free(grid, stream_function=psi)
    cs = CoefficientSet(grid, A, fields[0], fields[1], fields[2], M)
    over = {k: v for k, v in cs.sup_norms().items() if v > M}
    if over:
        raise ValueError(f"baseline exceeds M={M}: {over}")
    return cs


# -- columnar text format ----------------------------------------------------------

def _columns(grid: SpatialGrid) -> list[str]:
    xs = ["x", "y"][: grid.dim]
    return ["node", *xs, *[f"A{k + 1}" for k in range(grid.dim)], "p", "qplus", "qminus"]


def format_coefficients(cs: CoefficientSet) -> str:
    grid = cs.grid
    buf = io.StringIO()
    buf.write("# " + " ".join(_columns(grid)) + "\n")
    for n in range(grid.size):
        vals = [*grid.coords[n], *cs.A[:, n], cs.p[n], cs.qplus[n], cs.qminus[n]]
        buf.write(str(n) + " " + " ".join(f"{v:.17g}" for v in vals) + "\n")
    return buf.getvalue()


def write_coefficients(path: Union[str, Path], cs: CoefficientSet) -> None:
    Path(path).write_text(format_coefficients(cs))


def read_coefficients(path: Union[str, Path], grid: SpatialGrid, M: float) -> CoefficientSet:
    data = np.loadtxt(path, comments="#", ndmin=2)
    expected = len(_columns(grid))
    if data.shape != (grid.size, expected):
        raise ValueError(f"expected {grid.size} rows of {expected} columns, got {data.shape}")
    if not np.allclose(data[:, 1:1 + grid.dim], grid.coords, rtol=0, atol=1e-12):
        raise ValueError("node coordinates do not match the grid")
    d = grid.dim
    A = data[:, 1 + d:1 + 2 * d].T
    return CoefficientSet(grid, A, data[:, 1 + 2 * d], data[:, 2 + 2 * d], data[:, 3 + 2 * d], M)
