import numpy as np
import pytest

from stagles.grid import field_norm, make_grid
from stagles.initial_conditions import (
    SpectrumSpec,
    random_spectral_field,
    sample_staggered,
    spectral_coefficients,
    spectrum_profile,
)
from stagles.operators import divergence


class TestSpectrumProfile:
    def test_zero_at_origin(self):
        assert spectrum_profile(0.0, 10.0) == 0.0

    def test_value_at_peak(self):
        kp = 7.0
        expected = (8 * np.pi / (3 * kp)) * np.exp(-2 * np.pi)
        assert spectrum_profile(kp, kp) == pytest.approx(expected, rel=1e-14)

    def test_ratio_at_double_peak(self):
        kp = 5.0
        ratio = spectrum_profile(2 * kp, kp) / spectrum_profile(kp, kp)
        assert ratio == pytest.approx(16 * np.exp(-6 * np.pi), rel=1e-12)

    def test_nonnegative(self):
        kappas = np.linspace(0, 50, 500)
        assert np.all(spectrum_profile(kappas, 12.0) >= 0.0)


class TestSpectralCoefficients:
    def test_mean_mode_zero(self):
        g = make_grid(2, (32, 32), 1.0)
        uhat = spectral_coefficients(g, SpectrumSpec(8, seed=0))
        assert np.all(uhat[:, 0, 0] == 0.0)

    def test_nyquist_rows_zero(self):
        g = make_grid(2, (32, 32), 1.0)
        uhat = spectral_coefficients(g, SpectrumSpec(8, seed=0))
        assert np.all(uhat[:, 16, :] == 0.0)
        assert np.all(uhat[:, :, 16] == 0.0)

    def test_spectral_divergence_free(self):
        g = make_grid(2, (32, 32), 1.0)
        uhat = spectral_coefficients(g, SpectrumSpec(8, seed=1))
        k = [np.fft.fftfreq(n) * n for n in g.N]
        km = np.meshgrid(*k, indexing="ij")
        div = 2j * np.pi * (km[0] * uhat[0] + km[1] * uhat[1])
        mag = np.sqrt(np.sum(np.abs(uhat) ** 2, axis=0))
        mask = mag > 0
        assert np.max(np.abs(div[mask]) / mag[mask]) < 1e-10

    def test_per_mode_energy_matches_profile(self):
        g = make_grid(2, (64, 64), 1.0)
        kp = 10.0
        uhat = spectral_coefficients(g, SpectrumSpec(kp, seed=2))
        e = 0.5 * np.sum(np.abs(uhat) ** 2, axis=0)
        k = [np.fft.fftfreq(n) * n for n in g.N]
        km = np.meshgrid(*k, indexing="ij")
        kmag = np.hypot(*km)
        prof = spectrum_profile(kmag, kp)
        mask = e > 0
        np.testing.assert_allclose(e[mask], prof[mask], rtol=1e-12)

    def test_binned_spectrum_within_five_percent(self):
        g = make_grid(2, (64, 64), 1.0)
        kp = 10.0
        uhat = spectral_coefficients(g, SpectrumSpec(kp, seed=3))
        e = 0.5 * np.sum(np.abs(uhat) ** 2, axis=0)
        k = [np.fft.fftfreq(n) * n for n in g.N]
        km = np.meshgrid(*k, indexing="ij")
        kmag = np.hypot(*km)
        prof = spectrum_profile(kmag, kp)
        prof[kmag == 0] = 0.0
        prof[np.abs(km[0]) == 32] = 0.0
        prof[np.abs(km[1]) == 32] = 0.0
        for lo in (2.0, 5.0, 9.0, 14.0):
            bin_mask = (kmag >= lo) & (kmag <= lo * 1.6) & (kmag < 32)
            got = np.sum(e[bin_mask])
            want = np.sum(prof[bin_mask])
            assert got == pytest.approx(want, rel=0.05)

    def test_conjugate_symmetry_gives_real_field(self):
        g = make_grid(2, (32, 32), 1.0)
        uhat = spectral_coefficients(g, SpectrumSpec(6, seed=4))
        pre = sample_staggered(g, uhat)
        # re-derive the imaginary residue directly
        for a in range(2):
            z = np.fft.ifftn(uhat[a]) * g.cell_count
            assert np.max(np.abs(z.imag)) < 1e-12 * max(np.max(np.abs(z.real)), 1e-300)
        assert all(np.isrealobj(c) for c in pre.components)


class TestRandomSpectralField:
    def test_divergence_free_after_projection(self):
        g = make_grid(2, (64, 64), 1.0)
        u = random_spectral_field(g, SpectrumSpec(10, seed=5))
        assert field_norm(divergence(u)) / field_norm(u) < 1e-12

    def test_deterministic_per_seed(self):
        g = make_grid(2, (32, 32), 1.0)
        a = random_spectral_field(g, SpectrumSpec(8, seed=42))
        b = random_spectral_field(g, SpectrumSpec(8, seed=42))
        for x, y in zip(a.components, b.components):
            np.testing.assert_array_equal(x, y)
        c = random_spectral_field(g, SpectrumSpec(8, seed=43))
        assert any(np.any(x != y) for x, y in zip(a.components, c.components))

    def test_projection_energy_loss_small(self):
        g = make_grid(2, (64, 64), 1.0)
        spec = SpectrumSpec(10, seed=6)
        pre = sample_staggered(g, spectral_coefficients(g, spec))
        post = random_spectral_field(g, spec)
        retained = (field_norm(post) / field_norm(pre)) ** 2
        assert retained > 0.98

    def test_3d_field(self):
        g = make_grid(3, (16, 16, 16), 1.0)
        u = random_spectral_field(g, SpectrumSpec(4, seed=7))
        assert field_norm(divergence(u)) / field_norm(u) < 1e-11
        assert u.grid.d == 3

    def test_rejects_peak_beyond_nyquist(self):
        g = make_grid(2, (16, 16), 1.0)
        with pytest.raises(ValueError):
            random_spectral_field(g, SpectrumSpec(8.0, seed=0))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SpectrumSpec(-1.0)

    def test_dtype_cast(self):
        g = make_grid(2, (16, 16), 1.0)
        u = random_spectral_field(g, SpectrumSpec(4, seed=8), dtype=np.float32)
        assert u.dtype == np.float32
