"""Finite-volume operators on uniform periodic staggered grids.

All stencils are the second-order central ones of the staggered layout:
the divergence lands at cell centers, the pressure gradient at faces, and
convection interpolates both factors with half-weight averages before
differencing the flux products.  ``convection`` returns the momentum-side
contribution, i.e. minus the discrete divergence of the flux tensor.

The Poisson solve diagonalizes the scaled Laplacian ``L = Omega_p D G`` in
Fourier space (exact on uniform periodic grids) and pins the mean pressure
to zero.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, VectorField, inner_product


@dataclass(frozen=True)
class BodyForceSpec:
    kind: str = "none"  # "none" | "kolmogorov"
    amplitude: float = 1.0
    wavenumber: int = 4

    def __post_init__(self):
        if self.kind not in ("none", "kolmogorov"):
            raise ValueError(f"unknown body force kind {self.kind!r}")
        if not np.isfinite(self.amplitude):
            raise ValueError("body force amplitude must be finite")
        if self.kind == "kolmogorov" and self.wavenumber < 1:
            raise ValueError("forcing wavenumber must be >= 1")


@dataclass(frozen=True)
class FlowParams:
    viscosity: float
    force: BodyForceSpec = field(default_factory=BodyForceSpec)

    def __post_init__(self):
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")


# ---------------------------------------------------------------------------
# raw-array stencils (shared with the autodiff pullbacks)
# ---------------------------------------------------------------------------


def divergence_arrays(comps, h):
    out = np.zeros_like(comps[0])
    for ax, (u, ha) in enumerate(zip(comps, h)):
        out += (u - np.roll(u, 1, axis=ax)) / ha
    return out


def divergence_transpose_arrays(w, h):
    """Unweighted transpose of the divergence stencil."""
    return tuple((w - np.roll(w, -1, axis=ax)) / ha for ax, ha in enumerate(h))


def gradient_arrays(p, h):
    return tuple((np.roll(p, -1, axis=ax) - p) / ha for ax, ha in enumerate(h))


def gradient_transpose_arrays(comps, h):
    out = np.zeros_like(comps[0])
    for ax, (w, ha) in enumerate(zip(comps, h)):
        out += (np.roll(w, 1, axis=ax) - w) / ha
    return out


def diffusion_arrays(comps, h, nu):
    out = []
    for u in comps:
        lap = np.zeros_like(u)
        for ax, ha in enumerate(h):
            lap += (np.roll(u, -1, axis=ax) - 2.0 * u + np.roll(u, 1, axis=ax)) / ha**2
        out.append(nu * lap)
    return tuple(out)


def convection_arrays(comps, h):
    """Minus the staggered flux divergence of ``u u^T``, per component."""
    d = len(comps)
    out = []
    for a in range(d):
        ua = comps[a]
        acc = np.zeros_like(ua)
        for b in range(d):
            if b == a:
                # u_a u_a at cell centers, then difference back to the faces
                m = 0.5 * (np.roll(ua, 1, axis=a) + ua)
                prod = m * m
                acc += (np.roll(prod, -1, axis=a) - prod) / h[a]
            else:
                # u_a u_b at the shared corner/edge points
                fa = 0.5 * (ua + np.roll(ua, -1, axis=b))
                fb = 0.5 * (comps[b] + np.roll(comps[b], -1, axis=a))
                prod = fa * fb
                acc += (prod - np.roll(prod, 1, axis=b)) / h[b]
        out.append(-acc)
    return tuple(out)


def convection_vjp_arrays(comps, adjoints, h):
    """Pullback of ``convection_arrays`` at ``comps`` applied to ``adjoints``."""
    d = len(comps)
    grads = [np.zeros_like(c) for c in comps]
    for a in range(d):
        w = adjoints[a]
        ua = comps[a]
        for b in range(d):
            if b == a:
                m = 0.5 * (np.roll(ua, 1, axis=a) + ua)
                # acc += delta_plus(prod); transpose: dprod = roll(w,1) - w (over h)
                dprod = -(np.roll(w, 1, axis=a) - w) / h[a]
                dm = 2.0 * m * dprod
                grads[a] += 0.5 * (np.roll(dm, -1, axis=a) + dm)
            else:
                fa = 0.5 * (ua + np.roll(ua, -1, axis=b))
                fb = 0.5 * (comps[b] + np.roll(comps[b], -1, axis=a))
                dprod = -(w - np.roll(w, -1, axis=b)) / h[b]
                dfa = dprod * fb
                dfb = dprod * fa
                grads[a] += 0.5 * (dfa + np.roll(dfa, 1, axis=b))
                grads[b] += 0.5 * (dfb + np.roll(dfb, 1, axis=a))
    return tuple(grads)


def _laplacian_symbol(grid, dtype):
    """Fourier multiplier of L = Omega_p D G, shaped for broadcasting."""
    vol = grid.cell_volume
    lam = np.zeros(grid.N, dtype=dtype)
    for ax, (n, ha) in enumerate(zip(grid.N, grid.h)):
        k = np.arange(n)
        lam1 = -vol * (2.0 * np.sin(np.pi * k / n) / ha) ** 2
        shape = [1] * grid.d
        shape[ax] = n
        lam = lam + lam1.reshape(shape).astype(dtype)
    return lam


def poisson_solve_arrays(r, grid):
    real_dtype = r.dtype
    rhat = np.fft.fftn(r)
    lam = _laplacian_symbol(grid, real_dtype)
    zero = (0,) * grid.d
    lam[zero] = 1.0  # avoid divide-by-zero; the mode is zeroed next
    phat = rhat / lam
    phat[zero] = 0.0
    return np.real(np.fft.ifftn(phat)).astype(real_dtype, copy=False)


def project_arrays(comps, grid):
    r = grid.cell_volume * divergence_arrays(comps, grid.h)
    p = poisson_solve_arrays(r, grid)
    g = gradient_arrays(p, grid.h)
    return tuple(u - gp for u, gp in zip(comps, g))


# ---------------------------------------------------------------------------
# field-level operations
# ---------------------------------------------------------------------------


def divergence(u):
    return ScalarField(u.grid, divergence_arrays(u.components, u.grid.h))


def pressure_gradient(p):
    return VectorField(p.grid, gradient_arrays(p.values, p.grid.h))


def convection(u):
    return VectorField(u.grid, convection_arrays(u.components, u.grid.h))


def diffusion(u, nu):
    if nu < 0:
        raise ValueError("viscosity must be non-negative")
    return VectorField(u.grid, diffusion_arrays(u.components, u.grid.h, nu))


def body_force(grid, spec, dtype=np.float64):
    comps = [np.zeros(grid.N, dtype=dtype) for _ in range(grid.d)]
    if spec.kind == "kolmogorov":
        a2, _ = grid.lengths[1]
        L2 = grid.axis_extent(1)
        x2 = grid.cell_centers(1)  # axis-2 coordinate of the u1 points
        profile = spec.amplitude * np.sin(2.0 * np.pi * spec.wavenumber * (x2 - a2) / L2)
        shape = [1] * grid.d
        shape[1] = grid.N[1]
        comps[0] += profile.reshape(shape).astype(dtype)
    return VectorField(grid, tuple(comps))


def rhs(u, params, force=None):
    """Convective + diffusive + body-force terms (convection carries its sign)."""
    grid = u.grid
    conv = convection_arrays(u.components, grid.h)
    diff = diffusion_arrays(u.components, grid.h, params.viscosity)
    comps = [c + d for c, d in zip(conv, diff)]
    if force is None:
        force = body_force(grid, params.force, dtype=u.dtype)
    comps = [c + f for c, f in zip(comps, force.components)]
    return VectorField(grid, tuple(comps))


def poisson_solve(rhs_scalar):
    """Solve ``L p = rhs`` with mean(p) = 0; warns on inconsistent input."""
    r = rhs_scalar.values
    grid = rhs_scalar.grid
    total = abs(float(np.sum(r)))
    scale = float(np.sqrt(r.size)) * (float(np.linalg.norm(r.ravel())) + 1e-300)
    if total > 1e4 * np.finfo(r.dtype).eps * scale:
        warnings.warn(
            "Poisson right-hand side has a nonzero mean; solving the projected system",
            RuntimeWarning,
            stacklevel=2,
        )
    return ScalarField(grid, poisson_solve_arrays(r, grid))


def project(u):
    """Remove the discrete-gradient part: output is divergence-free."""
    return VectorField(u.grid, project_arrays(u.components, u.grid))


def dissipation(u, nu):
    return inner_product(u, diffusion(u, nu), weighting="volume")
