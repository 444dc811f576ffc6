"""Explicit Runge-Kutta integration of the pressure-free momentum equation.

Each stage derivative is projected so that a divergence-free state stays
divergence-free through the whole step.  The default scheme is the
three-stage, third-order low-storage method with

    b = (1/4, 0, 3/4),  a21 = 8/15,  a31 = 1/4,  a32 = 5/12,

classical RK4 is available through the same tableau interface.  Stages are
stored (not overwritten low-storage style); the reverse-mode pass reuses
them.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .grid import VectorField
from .operators import body_force, project_arrays, rhs


class BlowupError(RuntimeError):
    """Raised when an integration produces non-finite values."""


@dataclass(frozen=True)
class RKTableau:
    name: str
    a: tuple  # rows of Fractions, strictly lower triangular
    b: tuple

    @property
    def stages(self):
        return len(self.b)

    def a_float(self):
        return [[float(x) for x in row] for row in self.a]

    def b_float(self):
        return [float(x) for x in self.b]

    def c(self):
        """Stage abscissae c_i = sum_j a_ij (exact fractions)."""
        return tuple(sum(row, Fraction(0)) for row in self.a)

    def stability_coefficients(self, order=None):
        """Taylor coefficients of the linear-test amplification factor.

        Returns exact fractions (r_0, r_1, ...) with R(z) = sum r_k z^k,
        r_k = b^T A^(k-1) 1 for k >= 1.
        """
        s = self.stages
        if order is None:
            order = s
        ones = [Fraction(1)] * s
        coeffs = [Fraction(1)]
        vec = ones
        for _ in range(order):
            coeffs.append(sum(bi * vi for bi, vi in zip(self.b, vec)))
            vec = [sum(self.a[i][j] * vec[j] for j in range(s)) for i in range(s)]
        return tuple(coeffs)

    def __post_init__(self):
        for i, row in enumerate(self.a):
            if any(row[j] != 0 for j in range(i, len(row))):
                raise ValueError("tableau must be strictly lower triangular (explicit)")
        if sum(self.b, Fraction(0)) != 1:
            raise ValueError("tableau weights must sum to 1")


def wray3_tableau():
    F = Fraction
    a = (
        (F(0), F(0), F(0)),
        (F(8, 15), F(0), F(0)),
        (F(1, 4), F(5, 12), F(0)),
    )
    b = (F(1, 4), F(0), F(3, 4))
    return RKTableau("wray3", a, b)


def rk4_tableau():
    F = Fraction
    a = (
        (F(0), F(0), F(0), F(0)),
        (F(1, 2), F(0), F(0), F(0)),
        (F(0), F(1, 2), F(0), F(0)),
        (F(0), F(0), F(1), F(0)),
    )
    b = (F(1, 6), F(1, 3), F(1, 3), F(1, 6))
    return RKTableau("rk4", a, b)


TABLEAUS = {"wray3": wray3_tableau, "rk4": rk4_tableau}


@dataclass(frozen=True)
class StepControl:
    mode: str = "cfl"  # "fixed" | "cfl"
    dt: float = 1e-3
    sigma: float = 0.85

    def __post_init__(self):
        if self.mode not in ("fixed", "cfl"):
            raise ValueError(f"unknown step control mode {self.mode!r}")
        if self.mode == "fixed" and not self.dt > 0:
            raise ValueError("fixed time step must be positive")
        if not 0.0 < self.sigma <= 1.0:
            raise ValueError("CFL safety factor must lie in (0, 1]")


def rk_step(u, dt, tableau, rhs_fn, project_each_stage=True):
    """One explicit RK step of du/dt = rhs_fn(u), optionally projecting stages."""
    grid = u.grid
    a = tableau.a_float()
    b = tableau.b_float()
    stages = []
    for i in range(tableau.stages):
        comps = tuple(c.copy() for c in u.components)
        for j in range(i):
            if a[i][j] != 0.0:
                comps = tuple(c + dt * a[i][j] * k for c, k in zip(comps, stages[j]))
        k = rhs_fn(VectorField(grid, comps))
        kc = k.components
        if project_each_stage:
            kc = project_arrays(kc, grid)
        for arr in kc:
            if not np.all(np.isfinite(arr)):
                raise BlowupError(f"non-finite values in RK stage {i + 1} (dt={dt:g})")
        stages.append(kc)
    out = tuple(c.copy() for c in u.components)
    for i in range(tableau.stages):
        if b[i] != 0.0:
            out = tuple(c + dt * b[i] * k for c, k in zip(out, stages[i]))
    return VectorField(grid, out)


def cfl_dt(u, params, sigma=0.85):
    """Adaptive step: convective and viscous limits with a safety factor."""
    grid = u.grid
    eps = 1e-12
    conv = min(
        grid.h[a] / (float(np.max(np.abs(u.components[a]))) + eps) for a in range(grid.d)
    )
    limit = conv
    if params.viscosity > 0:
        visc = min(h * h for h in grid.h) / (2.0 * grid.d * params.viscosity)
        limit = min(limit, visc)
    return sigma * limit


MAX_STEPS = 10_000_000


def integrate(u0, t_end, control, tableau, params, observer=None):
    """Advance to ``t_end`` exactly; observer sees (step, t, u) including step 0."""
    grid = u0.grid
    u = VectorField(grid, project_arrays(u0.components, grid))
    force = body_force(grid, params.force, dtype=u.dtype)

    def rhs_fn(v):
        return rhs(v, params, force=force)

    t = 0.0
    step = 0
    if observer is not None:
        observer(step, t, u)
    while t < t_end - 1e-14 * max(1.0, t_end):
        dt = control.dt if control.mode == "fixed" else cfl_dt(u, params, control.sigma)
        dt = min(dt, t_end - t)
        u = rk_step(u, dt, tableau, rhs_fn, project_each_stage=True)
        t += dt
        step += 1
        if observer is not None:
            observer(step, t, u)
        if step > MAX_STEPS:
            raise RuntimeError(f"exceeded {MAX_STEPS} steps before reaching t_end")
    return u
