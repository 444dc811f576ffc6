"""Discrete fine-to-coarse filters on nested staggered grids.

The face-averaging (FA) filter averages the fine velocities lying exactly
on each coarse face; it preserves the discrete divergence-free constraint
by construction.  The volume-averaging (VA) top-hat filter additionally
averages across the face-normal direction over one coarse-cell width and
does not preserve the constraint.  Compression factors must be integers so
that fine and coarse faces overlap.

The VA normal stencil is the symmetric segment tiling of the width-m*h
interval centered on the coarse face: m+1 taps with half-weight ends for
even m, m uniform taps for odd m (``normal_mode="trapezoid"``).  The
non-centered alternative ``"uniform-offset"`` averages the m fine faces
just below the coarse face.
"""

from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, StaggeredGrid, VectorField, make_grid
from .operators import body_force, divergence_arrays, project_arrays, rhs

FILTER_KINDS = ("fa", "va")


@dataclass(frozen=True)
class CoarseningMap:
    fine: StaggeredGrid
    coarse: StaggeredGrid
    factors: tuple

    @classmethod
    def create(cls, fine, coarse_N):
        coarse_N = tuple(int(n) for n in coarse_N)
        factors = []
        for nf, nc in zip(fine.N, coarse_N):
            if nf % nc != 0:
                raise ValueError(f"fine count {nf} not divisible by coarse count {nc}")
            factors.append(nf // nc)
        coarse = make_grid(fine.d, coarse_N, fine.lengths)
        return cls(fine=fine, coarse=coarse, factors=tuple(factors))


def _block_mean(arr, axis, m):
    if m == 1:
        return arr
    shape = arr.shape
    new = shape[:axis] + (shape[axis] // m, m) + shape[axis + 1 :]
    return arr.reshape(new).mean(axis=axis + 1)


def _block_spread(arr, axis, m):
    """Transpose of _block_mean (scatter with weight 1/m)."""
    if m == 1:
        return arr
    return np.repeat(arr, m, axis=axis) / m


def _normal_taps(m, mode):
    if mode == "trapezoid":
        if m % 2 == 0:
            half = m // 2
            offsets = list(range(-half, half + 1))
            weights = [1.0 / m] * len(offsets)
            weights[0] = 0.5 / m
            weights[-1] = 0.5 / m
        else:
            half = (m - 1) // 2
            offsets = list(range(-half, half + 1))
            weights = [1.0 / m] * len(offsets)
    elif mode == "uniform-offset":
        offsets = list(range(-(m - 1), 1))
        weights = [1.0 / m] * m
    else:
        raise ValueError(f"unknown VA normal mode {mode!r}")
    return offsets, weights


def face_average_arrays(comps, cmap):
    out = []
    for a, u in enumerate(comps):
        m_a = cmap.factors[a]
        sl = [slice(None)] * cmap.fine.d
        sl[a] = slice(m_a - 1, None, m_a)
        arr = u[tuple(sl)]
        for b in range(cmap.fine.d):
            if b != a:
                arr = _block_mean(arr, b, cmap.factors[b])
        out.append(arr)
    return tuple(out)


def face_average_transpose_arrays(coarse_comps, cmap):
    out = []
    for a, w in enumerate(coarse_comps):
        arr = w
        for b in range(cmap.fine.d):
            if b != a:
                arr = _block_spread(arr, b, cmap.factors[b])
        full = np.zeros(cmap.fine.N, dtype=w.dtype)
        m_a = cmap.factors[a]
        sl = [slice(None)] * cmap.fine.d
        sl[a] = slice(m_a - 1, None, m_a)
        full[tuple(sl)] = arr
        out.append(full)
    return tuple(out)


def volume_average_arrays(comps, cmap, normal_mode="trapezoid"):
    out = []
    for a, u in enumerate(comps):
        m_a = cmap.factors[a]
        offsets, weights = _normal_taps(m_a, normal_mode)
        smoothed = np.zeros_like(u)
        for off, w in zip(offsets, weights):
            smoothed += w * np.roll(u, -off, axis=a)
        sl = [slice(None)] * cmap.fine.d
        sl[a] = slice(m_a - 1, None, m_a)
        arr = smoothed[tuple(sl)]
        for b in range(cmap.fine.d):
            if b != a:
                arr = _block_mean(arr, b, cmap.factors[b])
        out.append(arr)
    return tuple(out)


def volume_average_transpose_arrays(coarse_comps, cmap, normal_mode="trapezoid"):
    out = []
    for a, w in enumerate(coarse_comps):
        arr = w
        for b in range(cmap.fine.d):
            if b != a:
                arr = _block_spread(arr, b, cmap.factors[b])
        m_a = cmap.factors[a]
        full = np.zeros(cmap.fine.N, dtype=w.dtype)
        sl = [slice(None)] * cmap.fine.d
        sl[a] = slice(m_a - 1, None, m_a)
        full[tuple(sl)] = arr
        offsets, weights = _normal_taps(m_a, normal_mode)
        acc = np.zeros_like(full)
        for off, wt in zip(offsets, weights):
            acc += wt * np.roll(full, off, axis=a)
        out.append(acc)
    return tuple(out)


def face_average(u, cmap):
    return VectorField(cmap.coarse, face_average_arrays(u.components, cmap))


def volume_average(u, cmap, normal_mode="trapezoid"):
    return VectorField(cmap.coarse, volume_average_arrays(u.components, cmap, normal_mode))


def apply_filter(u, cmap, kind):
    if kind == "fa":
        return face_average(u, cmap)
    if kind == "va":
        return volume_average(u, cmap)
    raise ValueError(f"unknown filter kind {kind!r}; expected one of {FILTER_KINDS}")


def pressure_filter(p, cmap):
    """Volume-weighted cell average implied by the face-averaging filter."""
    arr = p.values
    for b in range(cmap.fine.d):
        arr = _block_mean(arr, b, cmap.factors[b])
    return ScalarField(cmap.coarse, arr)


def commutator(u, cmap, kind, params):
    """Filtered fine projected rhs minus coarse projected rhs of the filtered field."""
    fine = cmap.fine
    coarse = cmap.coarse
    f_fine = rhs(u, params, force=body_force(fine, params.force, dtype=u.dtype))
    pf_fine = VectorField(fine, project_arrays(f_fine.components, fine))
    filtered_rhs = apply_filter(pf_fine, cmap, kind)

    ubar = apply_filter(u, cmap, kind)
    f_coarse = rhs(ubar, params, force=body_force(coarse, params.force, dtype=u.dtype))
    pf_coarse = VectorField(coarse, project_arrays(f_coarse.components, coarse))
    return filtered_rhs - pf_coarse


def div_commutator_cD(u, cmap, kind):
    """Divergence/filter commutator: coarse div of filtered u minus filtered div."""
    dbar = divergence_arrays(apply_filter(u, cmap, kind).components, cmap.coarse.h)
    psi_d = pressure_filter(ScalarField(cmap.fine, divergence_arrays(u.components, cmap.fine.h)), cmap)
    return ScalarField(cmap.coarse, dbar - psi_d.values)


def tophat_same_grid(field, n):
    """(2n+1)^d uniform moving average on the field's own grid, periodic."""
    if n < 0:
        raise ValueError("half-width must be >= 0")
    grid = field.grid
    if any(2 * n + 1 > N for N in grid.N):
        raise ValueError(f"stencil width {2 * n + 1} exceeds grid {grid.N}")

    def smooth(arr):
        for ax in range(grid.d):
            acc = np.zeros_like(arr)
            for j in range(-n, n + 1):
                acc += np.roll(arr, -j, axis=ax)
            arr = acc / (2 * n + 1)
        return arr

    if isinstance(field, VectorField):
        return VectorField(grid, tuple(smooth(c) for c in field.components))
    return ScalarField(grid, smooth(field.values))
