import dataclasses
import warnings

import numpy as np
import pytest

from twostate.carleman import WeightConfig
from twostate.coefficients import CoefficientSet, make_baseline, sample_perturbation
from twostate.forward import TwoStateField
from twostate.geometry import Domain, build_grid, select_observation_boundary
from twostate.inverse import (ToleranceWarning, build_probes, coefficient_distance, format_stability_csv,
                              linearized_reconstruct, reconstruct_pair, run_pair_experiment, snapshot_v0,
                              stability_scaling_study, summarize_ratios, weighted_trace_norm)


@pytest.fixture
def short1d():
    g = build_grid(Domain((0.0,), (1.0,), 0.1), 41)
    return g, make_baseline(g, 4.0, 0.5, 0.5, 1.0, -0.5, 0.3, 1)


def test_probe_counts(grid1d, baseline1d, grid2d, baseline2d):
    assert len(build_probes(grid1d, baseline1d, 1.0)) == 3
    assert len(build_probes(grid2d, baseline2d, 1.0)) == 4
    with pytest.raises(ValueError):
        build_probes(grid1d, baseline1d, 0.0)


def test_probe_design(grid2d, baseline2d):
    pr = build_probes(grid2d, baseline2d, 2.0)
    assert np.all(pr.initial[0][0] == 0) and np.all(pr.initial[0][1] == 2.0)
    assert np.all(pr.initial[1][0] == 2.0) and np.all(pr.initial[1][1] == 0)
    for sign in (1, -1):
        G = pr.gradient_matrix(sign)
        assert G.shape == (grid2d.size, 2, 2)
        assert np.allclose(G, np.eye(2), atol=1e-12)
    for u0, bd in zip(pr.initial, pr.boundary):
        assert np.allclose(bd.poly[0], u0[:, bd.nodes])
        assert bd.order == pr.order


def test_coefficient_distance_quadratic(grid2d, baseline2d):
    a = sample_perturbation(baseline2d, 0.2, 3).perturbed()
    b = sample_perturbation(baseline2d, 0.1, 3).perturbed()
    assert coefficient_distance(baseline2d, baseline2d) == 0.0
    assert np.isclose(coefficient_distance(b, baseline2d), coefficient_distance(a, baseline2d) / 4, rtol=1e-12)


def test_identical_pair_gives_zero_both_sides(grid1d, baseline1d):
    pr = build_probes(grid1d, baseline1d, 1.0, dt=0.01)
    gs = select_observation_boundary(grid1d, (-1.0,))
    rep = run_pair_experiment(grid1d, baseline1d, baseline1d, pr, 0.01, gs)
    assert rep.lhs == 0.0 and rep.rhs_raw == 0.0 and rep.ratio is None


def test_halving_amplitude(grid1d, baseline1d):
    dt = 0.005
    pr = build_probes(grid1d, baseline1d, 1.0, dt=dt)
    gs = select_observation_boundary(grid1d, (-1.0,))
    reps = stability_scaling_study(grid1d, baseline1d, [0.0, 0.05, 0.1], [4], pr, dt, gs)
    zero, small, big = reps
    assert zero.lhs == 0 and zero.ratio is None
    assert np.isclose(small.lhs, big.lhs / 4, rtol=1e-12)
    assert abs(small.rhs_raw / big.rhs_raw - 0.25) < 0.05
    assert summarize_ratios(reps)[4] < 1.2
    with pytest.raises(ValueError):
        stability_scaling_study(grid1d, baseline1d, [0.1, 0.05], [0], pr, dt, gs)


def test_stability_csv(grid1d, baseline1d):
    dt = 0.01
    pr = build_probes(grid1d, baseline1d, 1.0, dt=dt)
    gs = select_observation_boundary(grid1d, (-1.0,))
    reps = stability_scaling_study(grid1d, baseline1d, [0.0, 0.1], [0, 1], pr, dt, gs)
    lines = format_stability_csv(reps).splitlines()
    assert lines[0] == "seed,amplitude,lhs,rhs_raw,ratio,grid,dt"
    assert len(lines) == 5
    assert lines[1].split(",")[4] == ""  # undefined ratio at amplitude 0
    assert format_stability_csv(reps) == format_stability_csv(
        stability_scaling_study(grid1d, baseline1d, [0.0, 0.1], [0, 1], pr, dt, gs))


def test_weighted_trace_norm(grid1d, baseline1d):
    dt = 0.01
    cfg = WeightConfig((-1.0,), lam=0.1, T=1.0)
    gs = select_observation_boundary(grid1d, (-1.0,))
    times = np.arange(0, 51) * dt
    vals = np.ones((len(times), 2, len(gs.trace_nodes)), dtype=complex)
    one = weighted_trace_norm(cfg, 1.0, grid1d, vals, times, gs)
    assert one > 0
    assert np.isclose(weighted_trace_norm(cfg, 1.0, grid1d, 2 * vals, times, gs), 4 * one)
    assert weighted_trace_norm(cfg, 2.0, grid1d, vals, times, gs) < one
    pr = build_probes(grid1d, baseline1d, 1.0, dt=dt)
    c1 = sample_perturbation(baseline1d, 0.1, 0).perturbed()
    rep = run_pair_experiment(grid1d, c1, baseline1d, pr, dt, gs, weight_cfg=cfg, s=1.0)
    assert rep.mu_weighted is not None and 0 < rep.mu_weighted < np.inf


def test_snapshot_p_only(short1d):
    g, base = short1d
    pert = sample_perturbation(base, 0.2, 5)
    c1 = CoefficientSet(g, base.A, base.p + pert.dp, base.qplus, base.qminus, base.M)
    dt = 1e-4
    pr = build_probes(g, base, 1.0, dt=dt)
    v = snapshot_v0(g, c1, base, pr, 0, dt)
    assert isinstance(v, TwoStateField)
    scale = np.max(np.abs(pert.dp))
    assert np.max(np.abs(v.uplus - (-1j) * pert.dp)) < 1e-2 * scale
    assert np.max(np.abs(v.uminus)) < 1e-2 * scale


def test_reconstruct_zero_snapshots(short1d):
    g, base = short1d
    pr = build_probes(g, base, 1.0, dt=0.01)
    zeros = [np.zeros((2, g.size), dtype=complex)] * len(pr)
    res = linearized_reconstruct(g, zeros, pr)
    for f in (res.A, res.p, res.qplus, res.qminus):
        assert np.all(f == 0)
    assert res.consistent
    with pytest.raises(ValueError):
        linearized_reconstruct(g, zeros[:-1], pr)


def test_reconstruct_identical_pair_exactly_zero(short1d):
    g, base = short1d
    dt = g.domain.T / 400
    pr = build_probes(g, base, 1.0, dt=dt)
    res = reconstruct_pair(g, base, base, pr, dt)
    for f in (res.A, res.p, res.qplus, res.qminus):
        assert np.all(f == 0)


def test_reconstruct_p_only_no_cross_talk(short1d):
    g, base = short1d
    pert = sample_perturbation(base, 0.2, 5)
    c1 = CoefficientSet(g, base.A, base.p + pert.dp, base.qplus, base.qminus, base.M)
    dt = g.domain.T / 400
    res = reconstruct_pair(g, c1, base, build_probes(g, base, 1.0, dt=dt), dt)
    assert res.errors["p"] < 1e-2
    assert np.max(np.abs(res.qplus)) < 1e-2 * np.max(np.abs(pert.dp))
    assert np.max(np.abs(res.qminus)) < 1e-2 * np.max(np.abs(pert.dp))


def test_reconstruct_2d_small(grid2d, baseline2d):
    g = build_grid(Domain((0.0, 0.0), (1.0, 1.0), 0.1), 21)
    base = make_baseline(g, 4.0, 0.5, 0.5, 1.0, -0.5, 0.3, 1)
    c1 = sample_perturbation(base, 0.2, 7).perturbed()
    dt = 0.1 / 400
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ToleranceWarning)
        res = reconstruct_pair(g, c1, base, build_probes(g, base, 1.0, dt=dt), dt)
    assert max(res.imag_residual.values()) < 1e-2
    assert max(res.errors.values()) < 5e-2, res.errors


def test_tolerance_warning(short1d):
    g, base = short1d
    c1 = sample_perturbation(base, 0.2, 7).perturbed()
    dt = g.domain.T / 4
    with pytest.warns(ToleranceWarning):
        res = reconstruct_pair(g, c1, base, build_probes(g, base, 1.0, dt=dt), dt, tol=1e-12)
    assert not res.consistent
