import warnings

import numpy as np
import pytest

from stagles.analysis import msinc, taylor_green_field
from stagles.grid import ScalarField, VectorField, field_norm, inner_product, make_grid
from stagles.operators import (
    BodyForceSpec,
    FlowParams,
    body_force,
    convection,
    diffusion,
    dissipation,
    divergence,
    poisson_solve,
    pressure_gradient,
    project,
    rhs,
)

from conftest import random_scalar, random_vector


def _constant_vector(grid, value=2.5):
    return VectorField(grid, tuple(np.full(grid.N, value) for _ in range(grid.d)))


class TestDivergence:
    def test_constant_field(self, grid2d):
        assert field_norm(divergence(_constant_vector(grid2d))) == 0.0

    def test_single_face_stencil(self, grid2d):
        h = grid2d.h[0]
        comps = [np.zeros(grid2d.N) for _ in range(2)]
        comps[0][4, 4] = 1.0  # u1 on the upper x-face of cell (4, 4)
        d = divergence(VectorField(grid2d, comps)).values
        assert d[4, 4] == pytest.approx(1.0 / h)
        assert d[5, 4] == pytest.approx(-1.0 / h)
        d[4, 4] = d[5, 4] = 0.0
        assert np.all(d == 0.0)

    def test_taylor_green_exactly_divergence_free(self):
        g = make_grid(2, (48, 48), 2 * np.pi)
        u = taylor_green_field(g)
        assert np.max(np.abs(divergence(u).values)) < 1e-13

    def test_linearity(self, grid3d):
        x, y = random_vector(grid3d, 1), random_vector(grid3d, 2)
        lhs = divergence(VectorField(grid3d, tuple(2 * a + 3 * b for a, b in zip(x.components, y.components))))
        rhs_ = 2 * divergence(x).values + 3 * divergence(y).values
        np.testing.assert_allclose(lhs.values, rhs_, atol=1e-12)


class TestPressureGradient:
    def test_constant(self, grid2d):
        p = ScalarField(grid2d, np.full(grid2d.N, 7.0))
        assert field_norm(pressure_gradient(p)) == 0.0

    def test_unit_impulse(self, grid2d):
        h = grid2d.h
        vals = np.zeros(grid2d.N)
        vals[3, 3] = 1.0
        g = pressure_gradient(ScalarField(grid2d, vals))
        # faces adjacent to cell (3,3): gradient reaches +-1/h
        assert g.components[0][2, 3] == pytest.approx(1.0 / h[0])
        assert g.components[0][3, 3] == pytest.approx(-1.0 / h[0])
        assert g.components[1][3, 2] == pytest.approx(1.0 / h[1])
        assert g.components[1][3, 3] == pytest.approx(-1.0 / h[1])

    @pytest.mark.parametrize("dim", [2, 3])
    def test_adjointness(self, dim, grid2d, grid3d):
        grid = grid2d if dim == 2 else grid3d
        for seed in range(100):
            p = random_scalar(grid, seed)
            u = random_vector(grid, seed + 1000)
            lhs = inner_product(pressure_gradient(p), u, "volume")
            rhs_ = -inner_product(p, divergence(u), "volume")
            assert lhs == pytest.approx(rhs_, rel=1e-12, abs=1e-12)


class TestConvection:
    def test_constant(self, grid3d):
        assert field_norm(convection(_constant_vector(grid3d))) == 0.0

    def test_taylor_green_closed_form(self):
        g = make_grid(2, (64, 64), 2 * np.pi)
        d = g.h[0]
        u = taylor_green_field(g)
        c = convection(u)
        xu, _ = g.meshgrid(alpha=0)[:2]
        _, yv = g.meshgrid(alpha=1)[:2]
        coef = 0.25 * (msinc(d) + msinc(2 * d))
        # the operator returns the momentum contribution: minus the flux divergence
        np.testing.assert_allclose(c.components[0], -coef * np.sin(2 * xu), atol=1e-13)
        np.testing.assert_allclose(c.components[1], -coef * np.sin(2 * yv), atol=1e-13)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_energy_conservation_on_divergence_free(self, dim, grid2d, grid3d):
        grid = grid2d if dim == 2 else grid3d
        for seed in range(20):
            u = project(random_vector(grid, seed))
            ip = inner_product(u, convection(u), "volume")
            assert abs(ip) / field_norm(u, "volume") ** 2 < 1e-12


class TestDiffusion:
    def test_constant(self, grid2d):
        assert field_norm(diffusion(_constant_vector(grid2d), 0.7)) == 0.0

    def test_sine_eigenvalue(self):
        g = make_grid(2, (32, 32), 2 * np.pi)
        h = g.h[0]
        x = g.meshgrid(alpha=0)[0]
        u = VectorField(g, (np.sin(x), np.zeros(g.N)))
        out = diffusion(u, 1.0)
        lam = (2 * np.sin(h / 2) / h) ** 2
        np.testing.assert_allclose(out.components[0], -lam * np.sin(x), atol=1e-12)

    def test_negative_semidefinite(self, grid2d):
        for seed in range(100):
            u = random_vector(grid2d, seed)
            assert inner_product(u, diffusion(u, 0.3), "volume") <= 0.0

    def test_linearity(self, grid2d):
        x, y = random_vector(grid2d, 3), random_vector(grid2d, 4)
        combo = VectorField(grid2d, tuple(1.5 * a - 2.0 * b for a, b in zip(x.components, y.components)))
        lhs = diffusion(combo, 0.1)
        expected = [
            1.5 * a - 2.0 * b
            for a, b in zip(diffusion(x, 0.1).components, diffusion(y, 0.1).components)
        ]
        for got, exp in zip(lhs.components, expected):
            np.testing.assert_allclose(got, exp, atol=1e-12)

    def test_negative_viscosity_rejected(self, grid2d):
        with pytest.raises(ValueError):
            diffusion(random_vector(grid2d), -1.0)


class TestBodyForce:
    def test_none(self, grid2d):
        f = body_force(grid2d, BodyForceSpec("none"))
        assert field_norm(f) == 0.0

    def test_sine_value_at_sixteenth(self):
        # component 1 is A sin(2 pi kf x2); at x2 = 1/16 with kf = 4: sin(pi/2) = 1
        g = make_grid(2, (8, 8), 1.0)
        f = body_force(g, BodyForceSpec("kolmogorov", 1.0, 4))
        # u1 points have x2 at cell centers: (j + 1/2)/8; j = 0 gives x2 = 1/16
        assert f.components[0][0, 0] == pytest.approx(1.0, rel=1e-14)
        assert np.all(f.components[1] == 0.0)

    def test_3d_amplitude_five(self):
        g = make_grid(3, (8, 8, 8), 1.0)
        f = body_force(g, BodyForceSpec("kolmogorov", 5.0, 4))
        assert np.max(np.abs(f.components[0])) == pytest.approx(5.0, rel=1e-12)
        assert field_norm(VectorField(g, (np.zeros(g.N), f.components[1], f.components[2]))) == 0.0

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            BodyForceSpec("gaussian")
        with pytest.raises(ValueError):
            BodyForceSpec("kolmogorov", 1.0, 0)


class TestRHS:
    def test_zero_velocity_no_force(self, grid2d):
        params = FlowParams(viscosity=0.01)
        out = rhs(VectorField.zeros(grid2d), params)
        assert field_norm(out) == 0.0

    def test_zero_velocity_with_force(self, grid2d):
        params = FlowParams(viscosity=0.01, force=BodyForceSpec("kolmogorov", 1.0, 4))
        out = rhs(VectorField.zeros(grid2d), params)
        f = body_force(grid2d, params.force)
        for a, b in zip(out.components, f.components):
            np.testing.assert_array_equal(a, b)

    def test_taylor_green_combination(self):
        g = make_grid(2, (64, 64), 2 * np.pi)
        d = g.h[0]
        nu = 0.05
        u = taylor_green_field(g)
        out = rhs(u, FlowParams(viscosity=nu))
        xu, _ = g.meshgrid(alpha=0)[:2]
        lam = 2 * (2 * np.sin(d / 2) / d) ** 2  # two axes contribute equally
        expected = -0.25 * np.sin(2 * xu) * (msinc(d) + msinc(2 * d)) - nu * lam * u.components[0]
        np.testing.assert_allclose(out.components[0], expected, atol=1e-12)


def _dense_laplacian(grid):
    """Assemble L = Omega_p D G column by column (test oracle)."""
    n = grid.cell_count
    L = np.zeros((n, n))
    vol = grid.cell_volume
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        p = ScalarField.from_flat(grid, e)
        col = divergence(pressure_gradient(p)).values * vol
        L[:, j] = col.ravel(order="F")
    return L


class TestPoisson:
    def test_zero_rhs(self, grid2d):
        out = poisson_solve(ScalarField.zeros(grid2d))
        assert field_norm(out) == 0.0

    def test_cosine_round_trip(self):
        g = make_grid(2, (8, 8), 1.0)
        x = g.meshgrid()[0]
        p0 = ScalarField(g, np.cos(2 * np.pi * x))
        r = divergence(pressure_gradient(p0)).values * g.cell_volume
        sol = poisson_solve(ScalarField(g, r))
        np.testing.assert_allclose(sol.values, p0.values, atol=1e-12)

    def test_matches_dense_bordered_solve(self):
        g = make_grid(2, (8, 8), 1.0)
        n = g.cell_count
        rng = np.random.default_rng(8)
        r = rng.standard_normal(n)
        r -= r.mean()
        L = _dense_laplacian(g)
        bordered = np.zeros((n + 1, n + 1))
        bordered[:n, :n] = L
        bordered[:n, n] = 1.0
        bordered[n, :n] = 1.0
        sol = np.linalg.solve(bordered, np.concatenate([r, [0.0]]))[:n]
        fft_sol = poisson_solve(ScalarField.from_flat(g, r))
        np.testing.assert_allclose(fft_sol.flatten(), sol, atol=1e-12)

    def test_nonzero_mean_warns_but_solves(self, grid2d):
        vals = np.ones(grid2d.N)
        with pytest.warns(RuntimeWarning):
            out = poisson_solve(ScalarField(grid2d, vals))
        assert np.all(np.isfinite(out.values))
        assert abs(out.values.mean()) < 1e-12


class TestProject:
    def test_divergence_free_unchanged(self, grid2d):
        u = project(random_vector(grid2d, 9))
        again = project(u)
        for a, b in zip(again.components, u.components):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_annihilates_gradients(self, grid2d):
        p = random_scalar(grid2d, 10)
        g = pressure_gradient(p)
        out = project(g)
        assert field_norm(out) / field_norm(g) < 1e-12

    @pytest.mark.parametrize("dim", [2, 3])
    def test_idempotent_and_kills_divergence(self, dim):
        grid = make_grid(2, (16, 16), 1.0) if dim == 2 else make_grid(3, (8, 8, 8), 1.0)
        for seed in range(50):
            u = random_vector(grid, seed)
            pu = project(u)
            assert field_norm(divergence(pu)) / field_norm(u) < 1e-11
            ppu = project(pu)
            assert field_norm(ppu - pu) / field_norm(pu) < 1e-12


class TestDissipation:
    def test_zero_velocity(self, grid2d):
        assert dissipation(VectorField.zeros(grid2d), 0.1) == 0.0

    def test_zero_viscosity(self, grid2d):
        assert dissipation(random_vector(grid2d, 11), 0.0) == 0.0

    def test_sine_eigenfunction(self):
        g = make_grid(2, (32, 32), 2 * np.pi)
        h = g.h[0]
        x = g.meshgrid(alpha=0)[0]
        u = VectorField(g, (np.sin(x), np.zeros(g.N)))
        nu = 0.3
        lam = (2 * np.sin(h / 2) / h) ** 2
        expected = -nu * lam * field_norm(u, "volume") ** 2
        assert dissipation(u, nu) == pytest.approx(expected, rel=1e-12)

    def test_always_nonpositive(self, grid3d):
        for seed in range(20):
            assert dissipation(random_vector(grid3d, seed), 0.05) <= 0.0
