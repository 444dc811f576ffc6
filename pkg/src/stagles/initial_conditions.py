"""Random divergence-free velocity fields with a prescribed energy spectrum.

Modes are drawn with deterministic xoshiro256++ streams (one per velocity
component for the phases, one extra for the unit-vector angles), seeded
via SplitMix64 from a single 64-bit seed.  Canonical modes (all
non-negative wavenumbers) are visited in lexicographic order; negative
wavenumbers reuse the canonical draws with sign-flipped phases so the
inverse transform is real.  Nyquist rows and the mean mode are zeroed.

Each velocity component is evaluated at its own staggered points by a
half-cell phase shift before the inverse transform; a final staggered
projection makes the sampled field discretely divergence-free.
"""

from dataclasses import dataclass

import numpy as np

from .grid import VectorField
from .operators import project_arrays
from .rng import component_streams


@dataclass(frozen=True)
class SpectrumSpec:
    peak_wavenumber: float
    seed: int = 0

    def __post_init__(self):
        if not self.peak_wavenumber > 0:
            raise ValueError("peak wavenumber must be positive")


def spectrum_profile(kappa, kappa_p):
    """Model spectrum: grows like kappa^4, decays like a squared Gaussian."""
    kappa = np.asarray(kappa, dtype=np.float64)
    return (8.0 * np.pi / (3.0 * kappa_p**5)) * kappa**4 * np.exp(
        -2.0 * np.pi * (kappa / kappa_p) ** 2
    )


def _canonical_draws(grid, seed):
    """Phase and angle draws for all canonical (non-negative) modes."""
    d = grid.d
    shape = tuple(n // 2 + 1 for n in grid.N)
    streams = component_streams(seed, d + 1)
    xi = np.empty((d,) + shape)
    n_angles = 1 if d == 2 else 2
    angles = np.empty((n_angles,) + shape)
    for idx in np.ndindex(shape):
        for a in range(d):
            xi[(a,) + idx] = streams[a].uniform()
        if d == 2:
            angles[(0,) + idx] = 2.0 * np.pi * streams[d].uniform()
        else:
            angles[(0,) + idx] = np.pi * streams[d].uniform()
            angles[(1,) + idx] = 2.0 * np.pi * streams[d].uniform()
    return xi, angles


def spectral_coefficients(grid, spec):
    """Divergence-free spectral coefficients, shape (d, *N), complex.

    Normalized so that 0.5 * sum_a |uhat_a[k]|^2 equals the profile at
    ||k||; coefficients are DFT coefficients under the mean-preserving
    (1/N) convention.
    """
    d = grid.d
    N = grid.N
    xi, angles = _canonical_draws(grid, spec.seed)

    k_axes = [np.fft.fftfreq(n) * n for n in N]
    k_mesh = np.meshgrid(*[k.astype(np.int64) for k in k_axes], indexing="ij")
    abs_idx = tuple(np.abs(k) for k in k_mesh)
    signs = [np.sign(k).astype(np.float64) for k in k_mesh]

    tau = np.zeros(N)
    for a in range(d):
        tau += signs[a] * xi[a][abs_idx]

    kphys = [k_mesh[a] / grid.axis_extent(a) for a in range(d)]
    kappa = np.sqrt(sum(kp.astype(np.float64) ** 2 for kp in kphys))
    amp = np.sqrt(2.0 * spectrum_profile(kappa, spec.peak_wavenumber))
    a_k = amp * np.exp(2.0j * np.pi * tau)

    if d == 2:
        th = angles[0][abs_idx]
        e = [np.cos(th), np.sin(th)]
    else:
        th = angles[0][abs_idx]
        ph = angles[1][abs_idx]
        e = [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)]

    ksq = sum(kp**2 for kp in kphys)
    ksq_safe = np.where(ksq == 0, 1.0, ksq)
    kdote = sum(kp * ea for kp, ea in zip(kphys, e))
    w = [ea - kp * kdote / ksq_safe for ea, kp in zip(e, kphys)]
    wnorm = np.sqrt(sum(wa**2 for wa in w))
    wnorm_safe = np.where(wnorm < 1e-14, 1.0, wnorm)

    keep = (ksq > 0) & (wnorm >= 1e-14)
    for a in range(d):
        keep &= abs_idx[a] != N[a] // 2  # Nyquist rows break conjugate symmetry
    uhat = np.zeros((d,) + N, dtype=np.complex128)
    for a in range(d):
        uhat[a] = np.where(keep, a_k * w[a] / wnorm_safe, 0.0)
    return uhat


def sample_staggered(grid, uhat):
    """Inverse-transform coefficients onto each component's staggered points."""
    d = grid.d
    N = grid.N
    total = grid.cell_count
    comps = []
    for a in range(d):
        shifted = uhat[a].copy()
        for b in range(d):
            kb = np.fft.fftfreq(N[b]) * N[b]
            s = 1.0 if b == a else 0.5
            phase = np.exp(2.0j * np.pi * kb * s / N[b])
            shape = [1] * d
            shape[b] = N[b]
            shifted = shifted * phase.reshape(shape)
        z = np.fft.ifftn(shifted) * total
        comps.append(np.real(z))
    return VectorField(grid, tuple(comps))


def random_spectral_field(grid, spec, dtype=np.float64):
    """Seeded random velocity field: prescribed spectrum, divergence-free."""
    nyquist = min(n / (2.0 * grid.axis_extent(a)) for a, n in enumerate(grid.N))
    if spec.peak_wavenumber >= nyquist:
        raise ValueError(
            f"peak wavenumber {spec.peak_wavenumber} is at or beyond the grid Nyquist {nyquist}"
        )
    pre = sample_staggered(grid, spectral_coefficients(grid, spec))
    comps = project_arrays(pre.components, grid)
    return VectorField(grid, tuple(c.astype(dtype, copy=False) for c in comps))
