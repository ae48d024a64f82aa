"""Command-line driver: ``twostate <command> <config.ini>``.

Exit codes: 0 success, 1 configuration error, 2 property-check counterexample,
3 numerical-tolerance warning.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .carleman import (WeightConfig, build_weights, cell_centered_times, empirical_constant_scan,
                       format_scan_csv, smooth_test_family, verify_assumption1)
from .coefficients import format_coefficients, make_baseline, sample_perturbation
from .config import ExperimentConfig, load_config
from .errors import ConfigError, CounterexampleCandidate
from .forward import TwoStateTrajectory, format_trajectory, solve_ibvp
from .geometry import Domain, build_grid, l2_norm, select_observation_boundary
from .inverse import (ToleranceWarning, build_probes, format_error_summary, format_stability_csv,
                      reconstruct_pair, stability_scaling_study, summarize_ratios)
from .manufactured import convergence_study, default_problem

EXIT_OK, EXIT_CONFIG, EXIT_COUNTEREXAMPLE, EXIT_TOLERANCE = 0, 1, 2, 3

DRIFT_TOL = 1e-8
ORDER_TOL = 1.9
# node counts and time steps per cell; the 2D sequence is kept cheap and is still pre-asymptotic
MANUFACTURED_LEVELS = {1: ((81, 161, 321, 641), 1), 2: ((11, 21, 41, 81), 2)}


def _setup(cfg: ExperimentConfig):
    domain = Domain(cfg.lo, cfg.hi, cfg.T)
    res = cfg.resolution[0] if len(cfg.resolution) == 1 else cfg.resolution
    grid = build_grid(domain, res)
    baseline = make_baseline(grid, cfg.M, cfg.A0, cfg.p0, cfg.qplus0, cfg.qminus0,
                             cfg.variation, cfg.baseline_seed)
    return grid, baseline


def _write(outdir: Path, files: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (outdir / name).write_text(text)


def _eigenmode(grid) -> tuple[np.ndarray, float]:
    lo, hi = np.asarray(grid.domain.lo), np.asarray(grid.domain.hi)
    s = (grid.coords - lo) / (hi - lo)
    mode = np.prod(np.sin(np.pi * s), axis=1)
    return mode, float(np.sum((np.pi / (hi - lo)) ** 2))


def cmd_forward(cfg: ExperimentConfig) -> int:
    grid, baseline = _setup(cfg)
    lines = []
    status = EXIT_OK
    if cfg.initial == "eigenmode":
        mode, energy = _eigenmode(grid)
        u0 = np.stack([mode, np.zeros(grid.size)]).astype(complex)
        traj = solve_ibvp(grid, baseline, u0, None, cfg.dt)
        norms = traj.norms()
        drift = float(np.max(np.abs(norms - norms[0])) / norms[0])
        lines.append(f"norm_drift = {drift:.6e}")
        if drift > DRIFT_TOL:
            status = EXIT_TOLERANCE
        if all(np.all(f == 0) for f in baseline.fields().values()):
            exact = np.exp(-1j * energy * traj.times[-1]) * mode
            err = l2_norm(grid, traj.values[-1, 0] - exact)
            lines.append(f"eigenmode_error = {err:.6e}")
    else:
        k = 0 if cfg.initial == "probe1" else 1
        probes = build_probes(grid, baseline, cfg.alpha, cfg.order, cfg.dt)
        traj = solve_ibvp(grid, baseline, probes.initial[k], probes.boundary[k], cfg.dt)
        lines.append(f"final_norm = {traj.norms()[-1]:.6e}")

    if cfg.manufactured:
        levels, per_cell = MANUFACTURED_LEVELS[grid.dim]
        study = convergence_study(default_problem(grid.dim, cfg.T), levels,
                                  [per_cell * (n - 1) for n in levels])
        lines.append("manufactured_errors = " + " ".join(f"{e:.6e}" for e in study.errors))
        lines.append("manufactured_orders = " + " ".join(f"{o:.4f}" for o in study.orders))
        if min(study.orders) < ORDER_TOL:
            status = EXIT_TOLERANCE

    stride = cfg.export_every
    keep = np.arange(0, len(traj.times), stride)
    exported = TwoStateTrajectory(grid, traj.times[keep], traj.values[keep])
    report = "\n".join(lines) + "\n"
    _write(cfg.output_dir(), {"trajectory.txt": format_trajectory(exported), "diagnostics.txt": report})
    sys.stdout.write(report)
    return status


def cmd_carleman_scan(cfg: ExperimentConfig) -> int:
    grid, _ = _setup(cfg)
    wcfg = WeightConfig(cfg.x0, cfg.r, cfg.lam, cfg.weight_T)
    times = cell_centered_times(cfg.weight_T, cfg.time_cells)
    weights = build_weights(grid, wcfg, times)
    gammastar = select_observation_boundary(grid, cfg.x0)
    assumption = verify_assumption1(grid, wcfg, gammastar)
    family = smooth_test_family(grid, times, cfg.family_size, cfg.family_seed)
    try:
        rows = empirical_constant_scan(weights, family, cfg.s_grid, gammastar)
    except CounterexampleCandidate as exc:
        sys.stderr.write(f"counterexample candidate: {exc}\n")
        return EXIT_COUNTEREXAMPLE
    _write(cfg.output_dir(), {"carleman_scan.csv": format_scan_csv(rows)})
    sys.stdout.write(f"assumption1 min_gradient={assumption.min_gradient:.6e} "
                     f"exit_derivative={assumption.max_exit_derivative:.6e} "
                     f"convexity_margin={assumption.convexity_margin:.6e}\n")
    for row in rows:
        sys.stdout.write(f"s={row.s:g} worst_ratio={row.worst_ratio:.6e} member={row.argmax_member_id}\n")
    if not assumption.passed or not all(math.isfinite(r.worst_ratio) for r in rows):
        return EXIT_COUNTEREXAMPLE
    return EXIT_OK


def cmd_stability(cfg: ExperimentConfig) -> int:
    grid, baseline = _setup(cfg)
    probes = build_probes(grid, baseline, cfg.alpha, cfg.order, cfg.dt)
    gammastar = select_observation_boundary(grid, cfg.x0)
    reports = stability_scaling_study(grid, baseline, cfg.amplitudes, cfg.seeds, probes, cfg.dt, gammastar)
    _write(cfg.output_dir(), {"stability.csv": format_stability_csv(reports)})
    for seed, spread in summarize_ratios(reports).items():
        sys.stdout.write(f"seed={seed} ratio_spread={spread:.4f}\n")
    return EXIT_OK


def cmd_reconstruct(cfg: ExperimentConfig) -> int:
    grid, baseline = _setup(cfg)
    probes = build_probes(grid, baseline, cfg.alpha, cfg.order, cfg.dt)
    coeffs1 = sample_perturbation(baseline, cfg.rec_amplitude, cfg.rec_seed).perturbed()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ToleranceWarning)
        result = reconstruct_pair(grid, coeffs1, baseline, probes, cfg.dt, tol=cfg.rec_tolerance)
    summary = format_error_summary(result)
    text = format_coefficients(result.as_coefficients(cfg.M)) + summary
    _write(cfg.output_dir(), {"recovered.txt": text})
    sys.stdout.write(summary)
    for w in caught:
        sys.stderr.write(f"warning: {w.message}\n")
    return EXIT_OK if result.consistent else EXIT_TOLERANCE


def cmd_validate(cfg: ExperimentConfig) -> int:
    sys.stdout.write(cfg.to_ini())
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "carleman-scan": cmd_carleman_scan,
    "stability": cmd_stability,
    "reconstruct": cmd_reconstruct,
    "validate-config": cmd_validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="twostate", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", type=Path)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
