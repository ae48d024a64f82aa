"""Uniform grids on intervals and rectangles, boundary bookkeeping and quadrature.

Nodes of a 2D grid are stored in C order over ``(i, j)`` so that node
``i * ny + j`` sits at ``(x[i], y[j])``. Every array that represents a field
on the grid has the node axis last; leading axes (time, components) are
carried through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod_k (lo_k, hi_k)`` together with a time horizon."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    T: float

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "T", float(self.T))
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        if len(lo) not in (1, 2):
            raise ValueError(f"only 1D and 2D domains are supported, got dim={len(lo)}")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate bounds lo={lo}, hi={hi}")
        if not self.T > 0:
            raise ValueError(f"time horizon must be positive, got T={self.T}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains_closure(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        return bool(np.all(point >= self.lo) and np.all(point <= self.hi))

    def distance_to_closure(self, point) -> float:
        point = np.asarray(point, dtype=float)
        gap = np.maximum(np.asarray(self.lo) - point, 0.0) + np.maximum(point - np.asarray(self.hi), 0.0)
        return float(np.linalg.norm(gap))


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    domain: Domain
    shape: tuple[int, ...]
    h: tuple[float, ...]
    axes: tuple[np.ndarray, ...]
    coords: np.ndarray  # (N, dim)
    interior: np.ndarray
    boundary: np.ndarray
    normals: np.ndarray  # (len(boundary), dim), unit length
    corner: np.ndarray  # bool per boundary node
    weights: np.ndarray = field(repr=False)  # trapezoidal quadrature weights per node

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def as_array(self, values: np.ndarray) -> np.ndarray:
        """View a node-indexed array (node axis last) with the spatial shape restored."""
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + self.shape)

    def flat(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        return values.reshape(values.shape[: values.ndim - self.dim] + (self.size,))

    def evaluate(self, func) -> np.ndarray:
        """Sample ``func(*coordinates)`` at every node."""
        values = np.asarray(func(*self.coords.T))
        return np.broadcast_to(values, (self.size,)).copy()

    def ghost_axes(self) -> tuple[np.ndarray, ...]:
        """Axis coordinates extended by one ghost node on each side."""
        return tuple(np.concatenate(([a[0] - hk], a, [a[-1] + hk])) for a, hk in zip(self.axes, self.h))

    def boundary_position(self, node: int) -> int:
        pos = np.searchsorted(self.boundary, node)
        if pos >= len(self.boundary) or self.boundary[pos] != node:
            raise KeyError(f"node {node} is not a boundary node")
        return int(pos)


def build_grid(domain: Domain, resolution) -> SpatialGrid:
    """Uniform node grid on ``domain`` with ``resolution`` nodes per axis.

    Corner nodes of a rectangle get the normalized average of the two face
    normals; they are flagged in ``grid.corner`` so that Neumann traces can
    skip them.
    """
    shape = tuple(int(n) for n in np.atleast_1d(resolution))
    if len(shape) == 1 and domain.dim == 2:
        shape = shape * 2
    if len(shape) != domain.dim:
        raise ValueError(f"resolution {resolution} does not match dimension {domain.dim}")
    if any(n < 3 for n in shape):
        raise ValueError(f"need at least 3 nodes per axis, got {shape}")

    axes = tuple(np.linspace(a, b, n) for a, b, n in zip(domain.lo, domain.hi, shape))
    h = tuple((b - a) / (n - 1) for a, b, n in zip(domain.lo, domain.hi, shape))
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)

    index = np.indices(shape).reshape(domain.dim, -1).T
    lo_face = index == 0
    hi_face = index == np.asarray(shape) - 1
    on_boundary = np.any(lo_face | hi_face, axis=1)
    boundary = np.flatnonzero(on_boundary)
    interior = np.flatnonzero(~on_boundary)

    raw = hi_face[boundary].astype(float) - lo_face[boundary].astype(float)
    count = np.count_nonzero(raw, axis=1)
    normals = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    corner = count > 1

    w1 = []
    for n, hk in zip(shape, h):
        w = np.full(n, hk)
        w[[0, -1]] = 0.5 * hk
        w1.append(w)
    weights = w1[0] if domain.dim == 1 else np.outer(w1[0], w1[1]).ravel()

    return SpatialGrid(
        domain=domain,
        shape=shape,
        h=h,
        axes=axes,
        coords=coords,
        interior=interior,
        boundary=boundary,
        normals=normals,
        corner=corner,
        weights=weights,
    )


@dataclass(frozen=True, eq=False)
class ObservationBoundary:
    """Boundary nodes where ``(x - x0) . nu >= 0``.

    ``nodes`` holds every selected boundary node, corners included.
    ``trace_nodes`` is the face-interior subset on which normal derivatives
    are evaluated; ``inward`` gives the two inward neighbours used by the
    one-sided stencil and ``spacing`` the grid step along the normal.
    """

    grid: SpatialGrid
    x0: np.ndarray
    nodes: np.ndarray
    trace_nodes: np.ndarray
    trace_normals: np.ndarray
    inward: np.ndarray  # (n_trace, 2)
    spacing: np.ndarray
    weights: np.ndarray  # boundary quadrature weight per trace node

    def __len__(self) -> int:
        return len(self.nodes)


def _inward_neighbours(grid: SpatialGrid, nodes: np.ndarray):
    index = np.stack(np.unravel_index(nodes, grid.shape), axis=1)
    shape = np.asarray(grid.shape)
    inward = np.empty((len(nodes), 2), dtype=int)
    spacing = np.empty(len(nodes))
    weights = np.empty(len(nodes))
    normals = np.empty((len(nodes), grid.dim))
    for row, idx in enumerate(index):
        axis = int(np.flatnonzero((idx == 0) | (idx == shape - 1))[0])
        step = 1 if idx[axis] == 0 else -1
        normal = np.zeros(grid.dim)
        normal[axis] = -step
        for m in (1, 2):
            nb = idx.copy()
            nb[axis] += m * step
            inward[row, m - 1] = np.ravel_multi_index(tuple(nb), grid.shape)
        spacing[row] = grid.h[axis]
        weights[row] = 1.0 if grid.dim == 1 else grid.h[1 - axis]
        normals[row] = normal
    return inward, spacing, weights, normals


def select_observation_boundary(grid: SpatialGrid, x0: Sequence[float]) -> ObservationBoundary:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (grid.dim,):
        raise ValueError(f"x0 must have {grid.dim} coordinates")
    if grid.domain.contains_closure(x0):
        raise ValueError(f"x0={x0.tolist()} lies in the closed domain")

    side = np.einsum("ij,ij->i", grid.coords[grid.boundary] - x0, grid.normals)
    keep = side >= 0.0
    nodes = grid.boundary[keep]
    trace_nodes = grid.boundary[keep & ~grid.corner]
    inward, spacing, weights, normals = _inward_neighbours(grid, trace_nodes)
    return ObservationBoundary(
        grid=grid,
        x0=x0,
        nodes=nodes,
        trace_nodes=trace_nodes,
        trace_normals=normals,
        inward=inward,
        spacing=spacing,
        weights=weights,
    )


def full_boundary(grid: SpatialGrid) -> ObservationBoundary:
    """All face-interior boundary nodes as an observation set (no x0 selection)."""
    trace_nodes = grid.boundary[~grid.corner]
    inward, spacing, weights, normals = _inward_neighbours(grid, trace_nodes)
    return ObservationBoundary(grid, np.full(grid.dim, np.nan), grid.boundary.copy(), trace_nodes,
                               normals, inward, spacing, weights)


def neumann_trace(field: np.ndarray, where: ObservationBoundary) -> np.ndarray:
    """Outward normal derivative at the trace nodes of ``where``.

    Uses the one-sided stencil ``(3 u_b - 4 u_1 + u_2) / (2 h)`` along the
    inward normal, exact for quadratics. Leading axes of ``field`` are kept.
    """
    field = np.asarray(field)
    if field.shape[-1] != where.grid.size:
        raise ValueError(f"field has {field.shape[-1]} nodes, grid has {where.grid.size}")
    ub = field[..., where.trace_nodes]
    u1 = field[..., where.inward[:, 0]]
    u2 = field[..., where.inward[:, 1]]
    return (3.0 * ub - 4.0 * u1 + u2) / (2.0 * where.spacing)


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        return np.ones_like(times)
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def l2_norm(grid: SpatialGrid, field: np.ndarray, time_weights: Optional[np.ndarray] = None) -> float:
    """Trapezoidal L2 norm over the domain, or over space-time.

    Without ``time_weights`` every leading axis is treated as a component and
    summed. With ``time_weights`` axis 0 is time and is integrated with them.
    """
    sq = np.abs(np.asarray(field)) ** 2
    if time_weights is None:
        return float(np.sqrt(np.sum(sq * grid.weights)))
    tw = np.asarray(time_weights).reshape((-1,) + (1,) * (sq.ndim - 1))
    return float(np.sqrt(np.sum(sq * grid.weights * tw)))


def boundary_l2_norm(where: ObservationBoundary, values: np.ndarray,
                     time_weights: Optional[np.ndarray] = None) -> float:
    """L2 norm of trace values over Gamma_* (points in 1D, edges in 2D), optionally times (0, T)."""
    sq = np.abs(np.asarray(values)) ** 2
    if time_weights is None:
        return float(np.sqrt(np.sum(sq * where.weights)))
    tw = np.asarray(time_weights).reshape((-1,) + (1,) * (sq.ndim - 1))
    return float(np.sqrt(np.sum(sq * where.weights * tw)))


# -- finite-difference operators -------------------------------------------------

def _axis_stride(grid: SpatialGrid, axis: int) -> int:
    return int(np.prod(grid.shape[axis + 1:]))


def interior_mask(grid: SpatialGrid) -> np.ndarray:
    mask = np.zeros(grid.size, dtype=bool)
    mask[grid.interior] = True
    return mask


def central_difference(grid: SpatialGrid, axis: int) -> sp.csr_matrix:
    """Centered first difference along ``axis``; rows of boundary nodes are zero."""
    rows = grid.interior
    stride = _axis_stride(grid, axis)
    hk = grid.h[axis]
    r = np.concatenate([rows, rows])
    c = np.concatenate([rows + stride, rows - stride])
    v = np.concatenate([np.full(len(rows), 0.5 / hk), np.full(len(rows), -0.5 / hk)])
    return sp.csr_matrix((v, (r, c)), shape=(grid.size, grid.size))


def laplacian(grid: SpatialGrid) -> sp.csr_matrix:
    """Standard (2 dim + 1)-point Laplacian; rows of boundary nodes are zero."""
    rows = grid.interior
    r, c, v = [rows], [rows], [np.full(len(rows), -2.0 * sum(1.0 / hk**2 for hk in grid.h))]
    for axis, hk in enumerate(grid.h):
        stride = _axis_stride(grid, axis)
        for off in (stride, -stride):
            r.append(rows)
            c.append(rows + off)
            v.append(np.full(len(rows), 1.0 / hk**2))
    return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                         shape=(grid.size, grid.size))


def gradient_all(grid: SpatialGrid, field: np.ndarray) -> np.ndarray:
    """Gradient at every node: centered inside, second-order one-sided at the ends.

    Returns an array with a new axis of length ``dim`` inserted before the node axis.
    """
    arr = grid.as_array(field)
    lead = arr.ndim - grid.dim
    parts = []
    for axis in range(grid.dim):
        d = np.gradient(arr, grid.h[axis], axis=lead + axis, edge_order=2)
        parts.append(grid.flat(d))
    return np.stack(parts, axis=-2)


def second_derivative_all(grid: SpatialGrid, field: np.ndarray, axis: int) -> np.ndarray:
    """d^2/dx_axis^2 at every node; one-sided four-point stencil at the ends."""
    field = np.asarray(field)
    spatial_axis = field.ndim - 1 + axis
    arr = np.moveaxis(grid.as_array(field), spatial_axis, -1)
    hk2 = grid.h[axis] ** 2
    out = np.empty_like(arr)
    out[..., 1:-1] = (arr[..., 2:] - 2.0 * arr[..., 1:-1] + arr[..., :-2]) / hk2
    if arr.shape[-1] >= 4:
        out[..., 0] = (2.0 * arr[..., 0] - 5.0 * arr[..., 1] + 4.0 * arr[..., 2] - arr[..., 3]) / hk2
        out[..., -1] = (2.0 * arr[..., -1] - 5.0 * arr[..., -2] + 4.0 * arr[..., -3] - arr[..., -4]) / hk2
    else:
        out[..., 0] = out[..., 1]
        out[..., -1] = out[..., -2]
    out = np.moveaxis(out, -1, spatial_axis)
    return grid.flat(out)


def laplacian_all(grid: SpatialGrid, field: np.ndarray) -> np.ndarray:
    field = np.asarray(field)
    return sum(second_derivative_all(grid, field, k) for k in range(grid.dim))
