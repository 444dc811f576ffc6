"""Staggered Cartesian grids and the fields living on them.

Conventions
-----------
A grid with ``N = (N_1, ..., N_d)`` cells covers the periodic box
``prod_a [a_a, b_a]`` with uniform spacing ``h_a = (b_a - a_a) / N_a``.
Pressure-like scalars sit at cell centers.  Velocity component ``alpha``
sits at the cell face normal to axis ``alpha``: array entry ``u[alpha][I]``
is the value on the *upper* face of cell ``I`` along that axis, so its
``alpha`` coordinate is a volume boundary node and all other coordinates
are cell centers.

Arrays are indexed ``arr[i_1, ..., i_d]``.  The canonical flat layout
(used for binary payloads) is axis-1-fastest, i.e. Fortran ravel order.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StaggeredGrid:
    d: int
    N: tuple
    lengths: tuple  # per-axis (a, b) extents
    h: tuple

    @property
    def cell_count(self):
        return int(np.prod(self.N))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def face_area(self, alpha):
        return self.cell_volume / self.h[alpha]

    def axis_extent(self, alpha):
        a, b = self.lengths[alpha]
        return b - a

    def cell_centers(self, alpha):
        a, _ = self.lengths[alpha]
        return a + (np.arange(self.N[alpha]) + 0.5) * self.h[alpha]

    def face_nodes(self, alpha):
        """Coordinates of the upper cell boundaries along an axis."""
        a, _ = self.lengths[alpha]
        return a + (np.arange(self.N[alpha]) + 1.0) * self.h[alpha]

    def component_coords(self, alpha):
        """Per-axis coordinate arrays of component ``alpha``'s points."""
        return tuple(
            self.face_nodes(beta) if beta == alpha else self.cell_centers(beta)
            for beta in range(self.d)
        )

    def meshgrid(self, alpha=None):
        """Full coordinate mesh for component ``alpha`` (None: cell centers)."""
        if alpha is None:
            coords = tuple(self.cell_centers(b) for b in range(self.d))
        else:
            coords = self.component_coords(alpha)
        return np.meshgrid(*coords, indexing="ij")


def make_grid(d, N, lengths):
    """Build a uniform periodic staggered grid.

    ``lengths`` may be given per axis as ``(a, b)`` pairs or as plain box
    sizes ``L`` (meaning ``[0, L]``).  A single entry is broadcast to all
    axes.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    N = tuple(int(n) for n in N)
    if len(N) != d:
        raise ValueError(f"expected {d} cell counts, got {len(N)}")
    if any(n < 2 for n in N):
        raise ValueError(f"all cell counts must be >= 2, got {N}")

    if np.isscalar(lengths):
        lengths = [lengths] * d
    if len(lengths) != d:
        raise ValueError(f"expected {d} extents, got {len(lengths)}")
    ext = []
    for ln in lengths:
        if np.isscalar(ln):
            a, b = 0.0, float(ln)
        else:
            a, b = float(ln[0]), float(ln[1])
        if not b > a:
            raise ValueError(f"extent must have b > a, got ({a}, {b})")
        ext.append((a, b))
    h = tuple((b - a) / n for (a, b), n in zip(ext, N))
    return StaggeredGrid(d=d, N=N, lengths=tuple(ext), h=h)


class ScalarField:
    """One value per cell center."""

    def __init__(self, grid, values):
        values = np.asarray(values)
        if values.shape != grid.N:
            raise ValueError(f"scalar field shape {values.shape} != grid {grid.N}")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid, dtype=np.float64):
        return cls(grid, np.zeros(grid.N, dtype=dtype))

    @property
    def dtype(self):
        return self.values.dtype

    def copy(self):
        return ScalarField(self.grid, self.values.copy())

    def astype(self, dtype):
        return ScalarField(self.grid, self.values.astype(dtype))

    def value_at(self, index):
        """Periodic accessor: indices wrap modulo N along every axis."""
        idx = tuple(int(i) % n for i, n in zip(index, self.grid.N))
        return self.values[idx]

    def flatten(self):
        """Canonical flat layout, axis-1 fastest."""
        return self.values.ravel(order="F")

    @classmethod
    def from_flat(cls, grid, flat):
        return cls(grid, np.asarray(flat).reshape(grid.N, order="F"))


class VectorField:
    """One face-located array per velocity component."""

    def __init__(self, grid, components):
        components = tuple(np.asarray(c) for c in components)
        if len(components) != grid.d:
            raise ValueError(f"expected {grid.d} components, got {len(components)}")
        for c in components:
            if c.shape != grid.N:
                raise ValueError(f"component shape {c.shape} != grid {grid.N}")
        self.grid = grid
        self.components = components

    @classmethod
    def zeros(cls, grid, dtype=np.float64):
        return cls(grid, tuple(np.zeros(grid.N, dtype=dtype) for _ in range(grid.d)))

    @property
    def dtype(self):
        return self.components[0].dtype

    def copy(self):
        return VectorField(self.grid, tuple(c.copy() for c in self.components))

    def astype(self, dtype):
        return VectorField(self.grid, tuple(c.astype(dtype) for c in self.components))

    def component_at(self, alpha, index):
        idx = tuple(int(i) % n for i, n in zip(index, self.grid.N))
        return self.components[alpha][idx]

    def flatten(self):
        return np.concatenate([c.ravel(order="F") for c in self.components])

    @classmethod
    def from_flat(cls, grid, flat):
        flat = np.asarray(flat)
        n = int(np.prod(grid.N))
        comps = tuple(
            flat[a * n : (a + 1) * n].reshape(grid.N, order="F") for a in range(grid.d)
        )
        return cls(grid, comps)

    def __add__(self, other):
        _same_grid(self, other)
        return VectorField(self.grid, tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other):
        _same_grid(self, other)
        return VectorField(self.grid, tuple(a - b for a, b in zip(self.components, other.components)))

    def __mul__(self, s):
        return VectorField(self.grid, tuple(s * c for c in self.components))

    __rmul__ = __mul__


def _same_grid(a, b):
    if a.grid is not b.grid and a.grid != b.grid:
        raise ValueError("fields live on different grids")


def _arrays(field):
    if isinstance(field, VectorField):
        return field.components
    return (field.values,)


def field_norm(field, weighting="none"):
    """Euclidean norm over all entries; ``volume`` weights each square by |cell|."""
    acc = 0.0
    for arr in _arrays(field):
        if not np.all(np.isfinite(arr)):
            raise ValueError("field contains non-finite entries")
        acc += float(np.sum(arr.astype(np.float64) ** 2))
    if weighting == "volume":
        acc *= field.grid.cell_volume
    elif weighting != "none":
        raise ValueError(f"unknown weighting {weighting!r}")
    return float(np.sqrt(acc))


def inner_product(a, b, weighting="none"):
    _same_grid(a, b)
    arrs_a, arrs_b = _arrays(a), _arrays(b)
    if len(arrs_a) != len(arrs_b):
        raise ValueError("cannot mix scalar and vector fields")
    acc = 0.0
    for xa, xb in zip(arrs_a, arrs_b):
        acc += float(np.sum(xa.astype(np.float64) * xb.astype(np.float64)))
    if weighting == "volume":
        acc *= a.grid.cell_volume
    elif weighting != "none":
        raise ValueError(f"unknown weighting {weighting!r}")
    return acc
