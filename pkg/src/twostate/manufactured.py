"""Manufactured solutions for the coupled system, with the source built symbolically."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import sympy

from .coefficients import CoefficientSet, make_divergence_free
from .forward import solve_ibvp
from .geometry import Domain, build_grid, l2_norm

X, Y, TIME = sympy.symbols("x y t", real=True)


@dataclass
class ManufacturedProblem:
    """Exact pair ``(u+, u-)`` and coefficients given as sympy expressions in x (, y) and t.

    In 1D ``vector_potential`` is a constant; in 2D it is a stream function
    and ``A = (d psi/dy, -d psi/dx)``.
    """

    domain: Domain
    uplus: sympy.Expr
    uminus: sympy.Expr
    vector_potential: sympy.Expr
    p: sympy.Expr
    qplus: sympy.Expr
    qminus: sympy.Expr
    M: float = 10.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def space(self) -> tuple:
        return (X,) if self.domain.dim == 1 else (X, Y)

    def _A(self) -> list:
        if self.domain.dim == 1:
            return [self.vector_potential]
        psi = self.vector_potential
        return [sympy.diff(psi, Y), -sympy.diff(psi, X)]

    def source_expressions(self) -> tuple:
        xs = self.space
        A = self._A()

        def lap(u):
            return sum(sympy.diff(u, v, 2) for v in xs)

        def a_grad(u):
            return sum(a * sympy.diff(u, v) for a, v in zip(A, xs))

        up, um = self.uplus, self.uminus
        fp = -sympy.I * sympy.diff(up, TIME) - lap(up) + self.qplus * up + a_grad(um) + self.p * um
        fm = -sympy.I * sympy.diff(um, TIME) - lap(um) + self.qminus * um - a_grad(up) + self.p * up
        return sympy.simplify(fp), sympy.simplify(fm)

    def _lambdas(self):
        if "f" not in self._cache:
            args = (*self.space, TIME)
            fp, fm = self.source_expressions()
            self._cache["f"] = [sympy.lambdify(args, e, "numpy") for e in (fp, fm)]
            self._cache["u"] = [sympy.lambdify(args, e, "numpy") for e in (self.uplus, self.uminus)]
        return self._cache

    @staticmethod
    def _on(grid, func, t) -> np.ndarray:
        values = func(*grid.coords.T, t)
        return np.broadcast_to(np.asarray(values, dtype=complex), (grid.size,))

    def exact(self, grid, t: float) -> np.ndarray:
        fu = self._lambdas()["u"]
        return np.stack([self._on(grid, fu[0], t), self._on(grid, fu[1], t)])

    def source(self, grid):
        ff = self._lambdas()["f"]

        def f(t):
            return np.stack([self._on(grid, ff[0], t), self._on(grid, ff[1], t)])
        return f

    def coefficients(self, grid) -> CoefficientSet:
        space = self.space

        def sample(expr):
            fn = sympy.lambdify(space, expr, "numpy")
            return np.broadcast_to(np.asarray(fn(*grid.coords.T), dtype=float), (grid.size,)).copy()

        if grid.dim == 1:
            if sympy.diff(self.vector_potential, X) != 0:
                raise ValueError("1D vector potential must be constant")
            A = make_divergence_free(grid, float(self.vector_potential))
        else:
            psi = sympy.lambdify((X, Y), self.vector_potential, "numpy")
            A = make_divergence_free(grid, stream_function=lambda x, y: psi(x, y) + 0.0 * x)
        return CoefficientSet(grid, A, sample(self.p), sample(self.qplus), sample(self.qminus), self.M)


def default_problem(dim: int = 1, T: float = 0.5) -> ManufacturedProblem:
    pi = sympy.pi
    if dim == 1:
        return ManufacturedProblem(
            Domain((0.0,), (1.0,), T),
            uplus=sympy.exp(sympy.I * TIME) * sympy.sin(pi * X),
            uminus=sympy.exp(2 * sympy.I * TIME) * sympy.sin(2 * pi * X),
            vector_potential=sympy.Rational(3, 10),
            p=sympy.Rational(1, 2) + sympy.cos(pi * X) / 4,
            qplus=1 + X**2,
            qminus=-sympy.Rational(1, 2) + sympy.sin(pi * X) / 3,
        )
    return ManufacturedProblem(
        Domain((0.0, 0.0), (1.0, 1.0), T),
        uplus=sympy.exp(sympy.I * TIME) * sympy.sin(pi * X) * sympy.sin(pi * Y),
        uminus=sympy.exp(2 * sympy.I * TIME) * sympy.sin(2 * pi * X) * sympy.sin(pi * Y),
        vector_potential=sympy.Rational(3, 10) * sympy.sin(pi * X) * sympy.sin(pi * Y) / pi,
        p=sympy.Rational(1, 2) + sympy.cos(pi * X) * sympy.cos(pi * Y) / 4,
        qplus=1 + X**2 - Y / 2,
        qminus=-sympy.Rational(1, 2) + sympy.sin(pi * X) / 3,
    )


@dataclass
class ConvergenceStudy:
    resolutions: list
    steps: list
    errors: list

    @property
    def orders(self) -> list[float]:
        e = self.errors
        return [math.log2(e[k] / e[k + 1]) for k in range(len(e) - 1)]


def convergence_study(problem: ManufacturedProblem, resolutions: Sequence[int],
                      steps: Sequence[int]) -> ConvergenceStudy:
    """Solve on each (resolution, steps) pair and record the final-time L2 error."""
    errors = []
    T = problem.domain.T
    for n, m in zip(resolutions, steps):
        grid = build_grid(problem.domain, n)
        cs = problem.coefficients(grid)
        dt = T / m
        traj = solve_ibvp(grid, cs, problem.exact(grid, 0.0), None, dt, f=problem.source(grid))
        errors.append(l2_norm(grid, traj.values[-1] - problem.exact(grid, T)))
    return ConvergenceStudy(list(resolutions), list(steps), errors)
