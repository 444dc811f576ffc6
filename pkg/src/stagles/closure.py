"""Closure models: zero, Smagorinsky eddy viscosity, and a staggered CNN.

The CNN collocates the face velocities to cell centers, applies periodic
radius-2 convolutions (tanh inner layers with bias, linear bias-free last
layer), and interpolates back to the faces.  The default stack is
d -> 24 -> 24 -> 24 -> 24 -> d, giving 45696 parameters in 2D and 234096
in 3D.  Parameters live in one flat vector; the per-layer slices are in
kernel-then-bias order with kernels raveled as (out, in, *window).

Smagorinsky evaluates the eddy viscosity at the native location of each
stress component (centers for the diagonal, corners/edges off-diagonal),
interpolating the missing squared strain entries with half-cell averages.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grid import VectorField

ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class ConvLayerSpec:
    radius: int
    in_channels: int
    out_channels: int
    activation: str
    bias: bool

    def kernel_size(self, d):
        return (2 * self.radius + 1) ** d

    def param_count(self, d):
        n = self.kernel_size(d) * self.in_channels * self.out_channels
        return n + (self.out_channels if self.bias else 0)


@dataclass(frozen=True)
class CNNArchitecture:
    d: int
    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise ValueError("architecture needs at least one layer")
        first, last = self.layers[0], self.layers[-1]
        if first.in_channels != self.d:
            raise ValueError("first layer must take one channel per velocity component")
        if last.out_channels != self.d or last.activation != "identity" or last.bias:
            raise ValueError("last layer must be linear, bias-free, with d output channels")
        for ly in self.layers:
            if ly.radius < 1:
                raise ValueError("kernel radii must be >= 1")
            if ly.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {ly.activation!r}")

    def param_count(self):
        return sum(ly.param_count(self.d) for ly in self.layers)

    def slices(self):
        """Per-layer (kernel_slice, kernel_shape, bias_slice) into the flat vector."""
        out = []
        off = 0
        for ly in self.layers:
            kshape = (ly.out_channels, ly.in_channels) + (2 * ly.radius + 1,) * self.d
            nk = int(np.prod(kshape))
            ksl = slice(off, off + nk)
            off += nk
            if ly.bias:
                bsl = slice(off, off + ly.out_channels)
                off += ly.out_channels
            else:
                bsl = None
            out.append((ksl, kshape, bsl))
        return out

    def receptive_radius(self):
        """Chebyshev reach of one input perturbation, collocations included."""
        return sum(ly.radius for ly in self.layers) + 1


def default_cnn_architecture(d, channels=24, radius=2, hidden_layers=3):
    layers = [ConvLayerSpec(radius, d, channels, "tanh", True)]
    layers += [ConvLayerSpec(radius, channels, channels, "tanh", True) for _ in range(hidden_layers)]
    layers.append(ConvLayerSpec(radius, channels, d, "identity", False))
    return CNNArchitecture(d=d, layers=tuple(layers))


def param_count(arch):
    return arch.param_count()


@dataclass
class ClosureParams:
    theta: np.ndarray
    arch: CNNArchitecture

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.arch.param_count(),):
            raise ValueError(
                f"parameter vector has {self.theta.size} entries, "
                f"architecture needs {self.arch.param_count()}"
            )


def init_params(arch, seed):
    """Uniform init on +-sqrt(1/fan_in) per layer, deterministic per seed."""
    rng = np.random.default_rng(seed)
    theta = np.empty(arch.param_count())
    for ly, (ksl, kshape, bsl) in zip(arch.layers, arch.slices()):
        fan_in = ly.in_channels * ly.kernel_size(arch.d)
        bound = np.sqrt(1.0 / fan_in)
        theta[ksl] = rng.uniform(-bound, bound, ksl.stop - ksl.start)
        if bsl is not None:
            theta[bsl] = rng.uniform(-bound, bound, bsl.stop - bsl.start)
    return ClosureParams(theta=theta, arch=arch)


@dataclass(frozen=True)
class SmagorinskyParam:
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("Smagorinsky coefficient must lie in [0, 1]")


# ---------------------------------------------------------------------------
# collocation
# ---------------------------------------------------------------------------


def collocate_arrays(comps):
    """Face values to cell centers, one channel per component."""
    return np.stack([0.5 * (np.roll(c, 1, axis=a) + c) for a, c in enumerate(comps)])


def collocate_transpose_arrays(channels):
    return tuple(0.5 * (channels[a] + np.roll(channels[a], -1, axis=a)) for a in range(len(channels)))


def decollocate_arrays(channels):
    """Cell-center channels back to the faces (transpose of collocation)."""
    return collocate_transpose_arrays(channels)


def decollocate_transpose_arrays(comps):
    return collocate_arrays(comps)


def collocate(u):
    return collocate_arrays(u.components)


def decollocate(channels, grid):
    return VectorField(grid, decollocate_arrays(channels))


# ---------------------------------------------------------------------------
# CNN forward
# ---------------------------------------------------------------------------


def cnn_forward_channels(x, params):
    """Apply the conv stack to batched center channels (B, C, *N)."""
    arch = params.arch
    for ly, (ksl, kshape, bsl) in zip(arch.layers, arch.slices()):
        K = params.theta[ksl].reshape(kshape).astype(x.dtype, copy=False)
        if bsl is not None:
            b = params.theta[bsl].astype(x.dtype, copy=False)
        else:
            b = np.zeros(ly.out_channels, dtype=x.dtype)
        x = _kernels.conv_forward(x, K, b)
        if ly.activation == "tanh":
            x = np.tanh(x)
    return x


def cnn_forward(u, params):
    """Closure prediction at the velocity points."""
    if params.arch.d != u.grid.d:
        raise ValueError("architecture dimension does not match the grid")
    x = collocate(u)[None]
    y = cnn_forward_channels(x, params)[0]
    return decollocate(y, u.grid)


# ---------------------------------------------------------------------------
# Smagorinsky
# ---------------------------------------------------------------------------


def _relocate(arr, src_tags, dst_tags):
    """Move a field between staggered locations by half-cell averages.

    Tags give the per-axis offset class: 0 for a center coordinate, 1 for
    a +h/2 face/corner coordinate.
    """
    out = arr
    for ax, (s, t) in enumerate(zip(src_tags, dst_tags)):
        if s == t:
            continue
        if s == 1 and t == 0:
            out = 0.5 * (out + np.roll(out, 1, axis=ax))
        else:
            out = 0.5 * (out + np.roll(out, -1, axis=ax))
    return out


def strain_rate(u):
    """Symmetric gradient: diagonal at centers, off-diagonal at corners/edges.

    Returns (diag, offdiag) where diag[a] holds S_aa and offdiag[(a, b)]
    (a < b) holds S_ab at the points staggered in both a and b.
    """
    comps = u.components
    h = u.grid.h
    d = u.grid.d
    diag = [(c - np.roll(c, 1, axis=a)) / h[a] for a, c in enumerate(comps)]
    offdiag = {}
    for a in range(d):
        for b in range(a + 1, d):
            dudb = (np.roll(comps[a], -1, axis=b) - comps[a]) / h[b]
            dvda = (np.roll(comps[b], -1, axis=a) - comps[b]) / h[a]
            offdiag[(a, b)] = 0.5 * (dudb + dvda)
    return diag, offdiag


def strain_rate_at_centers(u):
    """Full symmetric tensor per cell, off-diagonal averaged to centers."""
    diag, offdiag = strain_rate(u)
    d = u.grid.d
    S = np.zeros((d, d) + u.grid.N)
    for a in range(d):
        S[a, a] = diag[a]
    zeros = (0,) * d
    for (a, b), sab in offdiag.items():
        tags = tuple(1 if ax in (a, b) else 0 for ax in range(d))
        sc = _relocate(sab, tags, zeros)
        S[a, b] = sc
        S[b, a] = sc
    return S


def _magnitude_at(diag, offdiag, dst_tags, d):
    """sqrt(2 tr(S S)) with every squared entry relocated to dst_tags."""
    acc = 0.0
    for a in range(d):
        acc = acc + _relocate(diag[a] ** 2, (0,) * d, dst_tags)
    for (a, b), sab in offdiag.items():
        tags = tuple(1 if ax in (a, b) else 0 for ax in range(d))
        acc = acc + 2.0 * _relocate(sab**2, tags, dst_tags)
    return np.sqrt(2.0 * acc)


def smagorinsky(u, theta):
    """Divergence of the eddy-viscosity stress 2 nu_t S at the velocity points."""
    if isinstance(theta, SmagorinskyParam):
        theta = theta.theta
    if not 0.0 <= theta <= 1.0:
        raise ValueError("Smagorinsky coefficient must lie in [0, 1]")
    grid = u.grid
    d = grid.d
    h = grid.h
    width_sq = float(np.prod(h)) ** (2.0 / d)  # filter width = grid size
    diag, offdiag = strain_rate(u)

    nu_c = theta**2 * width_sq * _magnitude_at(diag, offdiag, (0,) * d, d)
    tau_diag = [2.0 * nu_c * s for s in diag]
    tau_off = {}
    for (a, b), sab in offdiag.items():
        tags = tuple(1 if ax in (a, b) else 0 for ax in range(d))
        nu_ab = theta**2 * width_sq * _magnitude_at(diag, offdiag, tags, d)
        tau_off[(a, b)] = 2.0 * nu_ab * sab

    out = []
    for a in range(d):
        acc = (np.roll(tau_diag[a], -1, axis=a) - tau_diag[a]) / h[a]
        for b in range(d):
            if b == a:
                continue
            tau = tau_off[(min(a, b), max(a, b))]
            acc = acc + (tau - np.roll(tau, 1, axis=b)) / h[b]
        out.append(acc)
    return VectorField(grid, tuple(out))


# ---------------------------------------------------------------------------
# parameter file format ("CNP1")
# ---------------------------------------------------------------------------

_ACT_CODES = {"tanh": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def save_params(params, path):
    arch = params.arch
    with open(path, "wb") as fh:
        fh.write(b"CNP1")
        fh.write(struct.pack("<II", arch.d, len(arch.layers)))
        for ly in arch.layers:
            fh.write(
                struct.pack(
                    "<IIIII",
                    ly.radius,
                    ly.in_channels,
                    ly.out_channels,
                    _ACT_CODES[ly.activation],
                    1 if ly.bias else 0,
                )
            )
        fh.write(params.theta.astype("<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"CNP1":
            raise ValueError(f"not a closure parameter file (magic {magic!r})")
        d, n_layers = struct.unpack("<II", fh.read(8))
        layers = []
        for _ in range(n_layers):
            r, cin, cout, act, bias = struct.unpack("<IIIII", fh.read(20))
            layers.append(ConvLayerSpec(r, cin, cout, _ACT_NAMES[act], bool(bias)))
        arch = CNNArchitecture(d=d, layers=tuple(layers))
        payload = fh.read(8 * arch.param_count())
        if len(payload) != 8 * arch.param_count():
            raise ValueError("truncated parameter payload")
        theta = np.frombuffer(payload, dtype="<f8").copy()
    return ClosureParams(theta=theta, arch=arch)
