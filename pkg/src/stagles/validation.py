"""Built-in exactness suites behind ``stagles validate``.

Each check returns (name, measured value, tolerance, pass).  The suites
are the machine-precision identities of the discretization: operator
algebra, filter consistency, the decaying-vortex commutator, and gradient
agreement with finite differences.
"""

import numpy as np

from .closure import ClosureParams, default_cnn_architecture, init_params
from .filters import CoarseningMap, face_average, pressure_filter, volume_average
from .grid import ScalarField, VectorField, field_norm, inner_product, make_grid
from .initial_conditions import SpectrumSpec, random_spectral_field
from .operators import FlowParams, convection, divergence, pressure_gradient, project
from .training import PairSample, grad_loss_prior, loss_prior


def _random_fields(grid, count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield VectorField(grid, tuple(rng.standard_normal(grid.N) for _ in range(grid.d))), ScalarField(
            grid, rng.standard_normal(grid.N)
        )


def _suite_operators():
    out = []
    for d, n in ((2, 16), (3, 8)):
        grid = make_grid(d, (n,) * d, 1.0)
        adj = dp = pp = pg = skew = 0.0
        for u, p in _random_fields(grid, 25, seed=d):
            gp = pressure_gradient(p)
            lhs = inner_product(gp, u, "volume")
            rhs = -inner_product(p, divergence(u), "volume")
            adj = max(adj, abs(lhs - rhs) / max(abs(lhs), 1e-30))
            pu = project(u)
            dp = max(dp, field_norm(divergence(pu)) / field_norm(u))
            ppu = project(pu)
            pp = max(pp, field_norm(ppu - pu) / field_norm(pu))
            pgp = project(gp)
            pg = max(pg, field_norm(pgp) / field_norm(gp))
            skew = max(skew, abs(inner_product(pu, convection(pu), "volume")) / field_norm(pu, "volume") ** 2)
        out.append((f"adjointness_{d}d", adj, 1e-11, adj <= 1e-11))
        out.append((f"div_after_project_{d}d", dp, 1e-11, dp <= 1e-11))
        out.append((f"projector_idempotent_{d}d", pp, 1e-11, pp <= 1e-11))
        out.append((f"project_kills_gradients_{d}d", pg, 1e-11, pg <= 1e-11))
        out.append((f"convection_skew_{d}d", skew, 1e-12, skew <= 1e-12))
    return out


def _suite_filters():
    out = []
    grid = make_grid(2, (64, 64), 1.0)
    u = random_spectral_field(grid, SpectrumSpec(10, seed=3))
    cmap = CoarseningMap.create(grid, (16, 16))
    fa = face_average(u, cmap)
    fa_div = field_norm(divergence(fa)) / field_norm(fa)
    out.append(("fa_divergence_consistency", fa_div, 1e-11, fa_div <= 1e-11))
    va = volume_average(u, cmap)
    va_div = field_norm(divergence(va)) / field_norm(va)
    out.append(("va_divergence_magnitude", va_div, 1e-2, va_div >= 1e-2))
    rng = np.random.default_rng(0)
    w = VectorField(grid, tuple(rng.standard_normal(grid.N) for _ in range(2)))
    lhs = divergence(face_average(w, cmap)).values
    rhs = pressure_filter(divergence(w), cmap).values
    psi = float(np.max(np.abs(lhs - rhs)))
    out.append(("pressure_filter_identity", psi, 1e-11, psi <= 1e-11))
    return out


def _suite_taylor_green():
    from .analysis import tg_commutator_check

    out = []
    for n in (1, 2, 4):
        res = tg_commutator_check(256, n)
        worst = max(res.values())
        out.append((f"tg_commutator_n{n}", worst, 1e-12, worst <= 1e-12))
    return out


def _suite_gradients():
    arch = default_cnn_architecture(2)
    grid = make_grid(2, (16, 16), 1.0)
    rng = np.random.default_rng(1)
    batch = [
        PairSample(
            VectorField(grid, tuple(rng.standard_normal(grid.N) for _ in range(2))),
            VectorField(grid, tuple(rng.standard_normal(grid.N) for _ in range(2))),
        )
    ]
    theta = init_params(arch, seed=0).theta
    _, g = grad_loss_prior(batch, theta, arch)
    h = 1e-6
    worst = 0.0
    for i in rng.choice(theta.size, 5, replace=False):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd = (loss_prior(batch, ClosureParams(tp, arch)) - loss_prior(batch, ClosureParams(tm, arch))) / (
            2 * h
        )
        worst = max(worst, abs(fd - g[i]) / max(abs(fd), 1e-12))
    return [("prior_gradient_fd", worst, 1e-6, worst <= 1e-6)]


_SUITES = {
    "operators": _suite_operators,
    "filters": _suite_filters,
    "taylor-green": _suite_taylor_green,
    "gradients": _suite_gradients,
}


def run_suite(name):
    try:
        fn = _SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(_SUITES)}")
    return fn()
