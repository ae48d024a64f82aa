import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twostate.geometry import (Domain, boundary_l2_norm, build_grid, full_boundary, l2_norm, neumann_trace,
                               select_observation_boundary, trapezoid_weights)


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain((0.0,), (0.0,), 1.0)
    with pytest.raises(ValueError):
        Domain((0.0,), (1.0,), 0.0)
    with pytest.raises(ValueError):
        Domain((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 1.0)


def test_grid_1d_five_nodes():
    g = build_grid(Domain((0.0,), (1.0,), 1.0), 5)
    assert g.h[0] == 0.25
    assert list(g.coords[g.boundary, 0]) == [0.0, 1.0]
    assert list(g.normals[:, 0]) == [-1.0, 1.0]


def test_grid_2d_counts():
    g = build_grid(Domain((0.0, 0.0), (1.0, 1.0), 1.0), 5)
    assert len(g.boundary) == 16
    assert len(g.interior) == 9
    assert set(g.boundary) | set(g.interior) == set(range(25))
    assert np.allclose(np.linalg.norm(g.normals, axis=1), 1.0)


def test_grid_2d_corner_convention():
    g = build_grid(Domain((0.0, 0.0), (1.0, 1.0), 1.0), 5)
    corners = g.boundary[g.corner]
    assert len(corners) == 4
    origin = list(g.boundary).index(0)
    assert np.allclose(g.normals[origin], [-np.sqrt(0.5), -np.sqrt(0.5)])
    assert 0 not in full_boundary(g).trace_nodes


def test_grid_too_coarse():
    with pytest.raises(ValueError):
        build_grid(Domain((0.0,), (1.0,), 1.0), 2)


def test_observation_1d_left_source():
    g = build_grid(Domain((0.0,), (1.0,), 1.0), 11)
    where = select_observation_boundary(g, (-1.0,))
    assert list(g.coords[where.nodes, 0]) == [1.0]


def test_observation_1d_right_source():
    g = build_grid(Domain((0.0,), (1.0,), 1.0), 11)
    where = select_observation_boundary(g, (2.0,))
    assert list(g.coords[where.nodes, 0]) == [0.0]


def test_observation_rejects_inside_point():
    g = build_grid(Domain((0.0,), (1.0,), 1.0), 11)
    with pytest.raises(ValueError):
        select_observation_boundary(g, (0.5,))
    with pytest.raises(ValueError):
        select_observation_boundary(g, (1.0,))


def test_observation_2d_edges():
    g = build_grid(Domain((0.0, 0.0), (1.0, 1.0), 1.0), 5)
    x0 = np.array([-1.0, 0.5])
    where = select_observation_boundary(g, x0)
    # oracle: evaluate the sign node by node
    expected = [n for i, n in enumerate(g.boundary) if (g.coords[n] - x0) @ g.normals[i] >= 0]
    assert sorted(where.nodes) == sorted(expected)
    xy = g.coords[where.nodes]
    right = g.coords[g.boundary][np.isclose(g.coords[g.boundary, 0], 1.0)]
    assert len(right) == np.sum(np.isclose(xy[:, 0], 1.0))
    assert not np.any(np.isclose(xy[:, 0], 0.0))
    top = xy[np.isclose(xy[:, 1], 1.0) & (xy[:, 0] < 1.0)]
    assert 0 < len(top) < 4


@settings(max_examples=30, deadline=None)
@given(st.floats(-3.0, -0.01), st.floats(-2.0, 3.0))
def test_observation_sign_property(a, b):
    g = build_grid(Domain((0.0, 0.0), (1.0, 1.0), 1.0), 7)
    x0 = np.array([a, b])
    where = select_observation_boundary(g, x0)
    pos = np.searchsorted(g.boundary, where.nodes)
    assert np.all(np.einsum("ij,ij->i", g.coords[where.nodes] - x0, g.normals[pos]) >= 0)


def test_trace_linear_and_zero():
    g = build_grid(Domain((0.0,), (1.0,), 1.0), 11)
    where = select_observation_boundary(g, (-1.0,))
    assert np.allclose(neumann_trace(g.coords[:, 0], where), 1.0, atol=1e-13)
    assert np.all(neumann_trace(np.zeros(g.size), where) == 0)


def test_trace_quadratic_second_order():
    errs = []
    for n in (11, 21, 41):
        g = build_grid(Domain((0.0,), (1.0,), 1.0), n)
        where = select_observation_boundary(g, (-1.0,))
        errs.append(abs(neumann_trace(g.coords[:, 0] ** 2, where)[0] - 2.0))
    # the three-point stencil is exact on quadratics
    assert max(errs) < 1e-11
    errs = []
    for n in (11, 21, 41):
        g = build_grid(Domain((0.0,), (1.0,), 1.0), n)
        where = select_observation_boundary(g, (-1.0,))
        errs.append(abs(neumann_trace(g.coords[:, 0] ** 3, where)[0] - 3.0))
    assert np.log2(errs[0] / errs[1]) > 1.9 and np.log2(errs[1] / errs[2]) > 1.9


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_trace_affine_exact_2d(a, b, c):
    g = build_grid(Domain((0.0, 0.0), (1.0, 2.0), 1.0), (6, 9))
    where = full_boundary(g)
    u = a * g.coords[:, 0] + b * g.coords[:, 1] + c
    exact = where.trace_normals @ np.array([a, b])
    assert np.allclose(neumann_trace(u, where), exact, atol=1e-10)


def test_l2_norm_examples():
    g = build_grid(Domain((0.0,), (1.0,), 1.0), 101)
    assert np.isclose(l2_norm(g, np.ones(g.size)), 1.0)
    assert l2_norm(g, np.zeros(g.size)) == 0.0
    assert abs(l2_norm(g, np.sin(np.pi * g.coords[:, 0])) - np.sqrt(0.5)) < 1e-6


def test_l2_norm_second_order():
    errs = []
    for n in (11, 21, 41):
        g = build_grid(Domain((0.0, 0.0), (1.0, 1.0), 1.0), n)
        x, y = g.coords.T
        errs.append(abs(l2_norm(g, np.exp(x + y)) - (np.e**2 - 1) / 2))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 1.9)


def test_space_time_and_boundary_norms():
    g = build_grid(Domain((0.0,), (1.0,), 1.0), 11)
    times = np.linspace(0.0, 2.0, 5)
    tw = trapezoid_weights(times)
    assert np.isclose(tw.sum(), 2.0)
    field = np.ones((5, g.size))
    assert np.isclose(l2_norm(g, field, tw), np.sqrt(2.0))
    where = select_observation_boundary(g, (-1.0,))
    assert np.isclose(boundary_l2_norm(where, np.full((5, 1), 3.0), tw), 3.0 * np.sqrt(2.0))
