"""Hot numeric kernels: periodic convolutions for the closure network.

Every kernel exists in two variants: a numba-jitted one and a pure-numpy
one.  The active variant is chosen once at import time; set the
environment variable ``STAGLES_NO_NUMBA=1`` to force the numpy path (the
same switch the benchmark uses to compare both).

The two paths accumulate terms in the same order per output element, so
forward and backward-input results are bit-identical.  Kernel-gradient
reductions (``conv*_backward_kernel``) use numpy's pairwise summation on
the numpy path and sequential summation on the numba path, so those agree
only to round-off.
"""

import os

import numpy as np

NUMBA_ENV_FLAG = "STAGLES_NO_NUMBA"

try:
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap

    def prange(*args):
        return range(*args)

USE_NUMBA = _HAVE_NUMBA and os.environ.get(NUMBA_ENV_FLAG, "0") not in ("1", "true")


def pad_periodic(x, r, spatial_axes):
    """Wrap-pad ``x`` by ``r`` cells along the given axes."""
    width = [(0, 0)] * x.ndim
    for ax in spatial_axes:
        width[ax] = (r, r)
    return np.pad(x, width, mode="wrap")


# ---------------------------------------------------------------------------
# numba variants
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _conv2d_forward_nb(xp, K, bias, out):
    B, cout, n1, n2 = out.shape
    cin = K.shape[1]
    kh = K.shape[2]
    kw = K.shape[3]
    for co in prange(cout):
        for b in range(B):
            for j in range(n1):
                for i in range(n2):
                    out[b, co, j, i] = bias[co]
            for ci in range(cin):
                for dy in range(kh):
                    for dx in range(kw):
                        k = K[co, ci, dy, dx]
                        for j in range(n1):
                            for i in range(n2):
                                out[b, co, j, i] += k * xp[b, ci, j + dy, i + dx]


@njit(cache=True, parallel=True)
def _conv2d_backward_input_nb(gp, K, dx_out):
    B, cin, n1, n2 = dx_out.shape
    cout = K.shape[0]
    kh = K.shape[2]
    kw = K.shape[3]
    for ci in prange(cin):
        for b in range(B):
            for j in range(n1):
                for i in range(n2):
                    dx_out[b, ci, j, i] = 0.0
            for co in range(cout):
                for dy in range(kh):
                    for dx in range(kw):
                        k = K[co, ci, dy, dx]
                        for j in range(n1):
                            for i in range(n2):
                                dx_out[b, ci, j, i] += k * gp[b, co, j + (kh - 1) - dy, i + (kw - 1) - dx]


@njit(cache=True, parallel=True)
def _conv2d_backward_kernel_nb(g, xp, dK, db):
    B, cout, n1, n2 = g.shape
    cin = dK.shape[1]
    kh = dK.shape[2]
    kw = dK.shape[3]
    for co in prange(cout):
        s = 0.0
        for b in range(B):
            for j in range(n1):
                for i in range(n2):
                    s += g[b, co, j, i]
        db[co] = s
        for ci in range(cin):
            for dy in range(kh):
                for dx in range(kw):
                    acc = 0.0
                    for b in range(B):
                        for j in range(n1):
                            for i in range(n2):
                                acc += g[b, co, j, i] * xp[b, ci, j + dy, i + dx]
                    dK[co, ci, dy, dx] = acc


@njit(cache=True, parallel=True)
def _conv3d_forward_nb(xp, K, bias, out):
    B, cout, n1, n2, n3 = out.shape
    cin = K.shape[1]
    kh = K.shape[2]
    kw = K.shape[3]
    kd = K.shape[4]
    for co in prange(cout):
        for b in range(B):
            for j in range(n1):
                for i in range(n2):
                    for l in range(n3):
                        out[b, co, j, i, l] = bias[co]
            for ci in range(cin):
                for dy in range(kh):
                    for dx in range(kw):
                        for dz in range(kd):
                            k = K[co, ci, dy, dx, dz]
                            for j in range(n1):
                                for i in range(n2):
                                    for l in range(n3):
                                        out[b, co, j, i, l] += k * xp[b, ci, j + dy, i + dx, l + dz]


@njit(cache=True, parallel=True)
def _conv3d_backward_input_nb(gp, K, dx_out):
    B, cin, n1, n2, n3 = dx_out.shape
    cout = K.shape[0]
    kh = K.shape[2]
    kw = K.shape[3]
    kd = K.shape[4]
    for ci in prange(cin):
        for b in range(B):
            for j in range(n1):
                for i in range(n2):
                    for l in range(n3):
                        dx_out[b, ci, j, i, l] = 0.0
            for co in range(cout):
                for dy in range(kh):
                    for dx in range(kw):
                        for dz in range(kd):
                            k = K[co, ci, dy, dx, dz]
                            for j in range(n1):
                                for i in range(n2):
                                    for l in range(n3):
                                        dx_out[b, ci, j, i, l] += k * gp[
                                            b, co, j + (kh - 1) - dy, i + (kw - 1) - dx, l + (kd - 1) - dz
                                        ]


@njit(cache=True, parallel=True)
def _conv3d_backward_kernel_nb(g, xp, dK, db):
    B, cout, n1, n2, n3 = g.shape
    cin = dK.shape[1]
    kh = dK.shape[2]
    kw = dK.shape[3]
    kd = dK.shape[4]
    for co in prange(cout):
        s = 0.0
        for b in range(B):
            for j in range(n1):
                for i in range(n2):
                    for l in range(n3):
                        s += g[b, co, j, i, l]
        db[co] = s
        for ci in range(cin):
            for dy in range(kh):
                for dx in range(kw):
                    for dz in range(kd):
                        acc = 0.0
                        for b in range(B):
                            for j in range(n1):
                                for i in range(n2):
                                    for l in range(n3):
                                        acc += g[b, co, j, i, l] * xp[b, ci, j + dy, i + dx, l + dz]
                        dK[co, ci, dy, dx, dz] = acc


# ---------------------------------------------------------------------------
# numpy variants (same per-element accumulation order as the numba loops)
# ---------------------------------------------------------------------------


def _conv_forward_np(xp, K, bias, out, spatial):
    cout, cin = K.shape[:2]
    ksizes = K.shape[2:]
    n = out.shape[2:]
    for co in range(cout):
        out[:, co] = bias[co]
        for ci in range(cin):
            for off in np.ndindex(*ksizes):
                sl = tuple(slice(o, o + n[ax]) for ax, o in enumerate(off))
                out[:, co] += K[(co, ci) + off] * xp[(slice(None), ci) + sl]


def _conv_backward_input_np(gp, K, dx_out, spatial):
    cout, cin = K.shape[:2]
    ksizes = K.shape[2:]
    n = dx_out.shape[2:]
    for ci in range(cin):
        dx_out[:, ci] = 0.0
        for co in range(cout):
            for off in np.ndindex(*ksizes):
                sl = tuple(
                    slice((ksizes[ax] - 1) - o, (ksizes[ax] - 1) - o + n[ax]) for ax, o in enumerate(off)
                )
                dx_out[:, ci] += K[(co, ci) + off] * gp[(slice(None), co) + sl]


def _conv_backward_kernel_np(g, xp, dK, db, spatial):
    cout, cin = dK.shape[:2]
    ksizes = dK.shape[2:]
    n = g.shape[2:]
    for co in range(cout):
        db[co] = np.sum(g[:, co])
        for ci in range(cin):
            for off in np.ndindex(*ksizes):
                sl = tuple(slice(o, o + n[ax]) for ax, o in enumerate(off))
                dK[(co, ci) + off] = np.sum(g[:, co] * xp[(slice(None), ci) + sl])


# ---------------------------------------------------------------------------
# public API: batched periodic convolution, (B, C, *N) layout
# ---------------------------------------------------------------------------


def conv_forward(x, K, bias):
    """Periodic convolution: out[b,co,I] = bias[co] + sum K[co,ci,off] x[b,ci,I+off-r]."""
    d = x.ndim - 2
    r = (K.shape[2] - 1) // 2
    spatial = tuple(range(2, 2 + d))
    xp = pad_periodic(x, r, spatial)
    out = np.empty((x.shape[0], K.shape[0]) + x.shape[2:], dtype=x.dtype)
    if USE_NUMBA:
        fn = _conv2d_forward_nb if d == 2 else _conv3d_forward_nb
        fn(xp, K, bias, out)
    else:
        _conv_forward_np(xp, K, bias, out, spatial)
    return out


def conv_backward_input(g, K):
    """Gradient of conv_forward w.r.t. x, given the output gradient g."""
    d = g.ndim - 2
    r = (K.shape[2] - 1) // 2
    spatial = tuple(range(2, 2 + d))
    gp = pad_periodic(g, r, spatial)
    dx = np.empty((g.shape[0], K.shape[1]) + g.shape[2:], dtype=g.dtype)
    if USE_NUMBA:
        fn = _conv2d_backward_input_nb if d == 2 else _conv3d_backward_input_nb
        fn(gp, K, dx)
    else:
        _conv_backward_input_np(gp, K, dx, spatial)
    return dx


def conv_backward_kernel(g, x, ksize):
    """Gradients of conv_forward w.r.t. kernel and bias."""
    d = g.ndim - 2
    r = (ksize - 1) // 2
    spatial = tuple(range(2, 2 + d))
    xp = pad_periodic(x, r, spatial)
    dK = np.empty((g.shape[1], x.shape[1]) + (ksize,) * d, dtype=g.dtype)
    db = np.empty(g.shape[1], dtype=g.dtype)
    if USE_NUMBA:
        fn = _conv2d_backward_kernel_nb if d == 2 else _conv3d_backward_kernel_nb
        fn(g, xp, dK, db)
    else:
        _conv_backward_kernel_np(g, xp, dK, db, spatial)
    return dK, db
