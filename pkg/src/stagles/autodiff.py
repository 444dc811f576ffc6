"""Reverse-mode differentiation through the solver's own primitives.

A :class:`Tape` records every primitive application in order; each node
saves the forward values its pullback needs.  ``backward`` walks the tape
once in reverse, accumulating adjoints in a fixed order, so gradients are
deterministic bit-for-bit in 64-bit mode.

Values on the tape are either a tuple of component arrays (velocity
field), a single array (scalar field, center channels, flat parameters),
or a Python float.  The Poisson solve and the projection are single
primitives with analytic adjoints (the scaled Laplacian is symmetric, and
the projector is its own transpose on uniform grids); their FFT internals
are never traced.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .closure import collocate_arrays, collocate_transpose_arrays
from .filters import (
    face_average_arrays,
    face_average_transpose_arrays,
    volume_average_arrays,
    volume_average_transpose_arrays,
)
from .operators import (
    convection_arrays,
    convection_vjp_arrays,
    diffusion_arrays,
    divergence_arrays,
    divergence_transpose_arrays,
    gradient_arrays,
    gradient_transpose_arrays,
    poisson_solve_arrays,
    project_arrays,
)


class UnregisteredPrimitiveError(KeyError):
    """A tape operation was requested that has no registered pullback."""


@dataclass
class Node:
    name: str
    parents: tuple
    value: object
    vjp: object  # callable(adjoint) -> tuple of parent adjoints, or None for leaves


class Var:
    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.nodes[self.idx].value


PRIMITIVES = {}


def register(name):
    def deco(fn):
        PRIMITIVES[name] = fn
        return fn

    return deco


class Tape:
    """Ordered record of primitive applications ending in a scalar loss."""

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    def leaf(self, value, name="leaf"):
        self.nodes.append(Node(name, (), value, None))
        return Var(self, len(self.nodes) - 1)

    def apply(self, name, *parents, **static):
        try:
            fwd = PRIMITIVES[name]
        except KeyError:
            raise UnregisteredPrimitiveError(
                f"primitive {name!r} has no registered pullback"
            ) from None
        value, vjp = fwd(*[p.value for p in parents], **static)
        self.nodes.append(Node(name, tuple(p.idx for p in parents), value, vjp))
        return Var(self, len(self.nodes) - 1)

    def backward(self, out):
        """Adjoints of the scalar ``out`` w.r.t. every node; returns the list."""
        if not isinstance(out.value, float):
            raise TypeError("backward expects a scalar terminal value")
        adjoints = [None] * len(self.nodes)
        adjoints[out.idx] = 1.0
        for idx in range(out.idx, -1, -1):
            node = self.nodes[idx]
            g = adjoints[idx]
            if g is None or node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for pidx, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if self.check_finite and not _all_finite(pg):
                    raise FloatingPointError(
                        f"non-finite adjoint from primitive {node.name!r} at tape index {idx}"
                    )
                adjoints[pidx] = _accumulate(adjoints[pidx], pg)
        return adjoints

    def grad(self, out, wrt):
        adjoints = self.backward(out)
        g = adjoints[wrt.idx]
        if g is None:
            g = _zeros_like_value(wrt.value)
        return g


def _all_finite(x):
    if isinstance(x, tuple):
        return all(np.all(np.isfinite(c)) for c in x)
    if isinstance(x, float):
        return np.isfinite(x)
    return bool(np.all(np.isfinite(x)))


def _zeros_like_value(v):
    if isinstance(v, tuple):
        return tuple(np.zeros_like(c) for c in v)
    if isinstance(v, float):
        return 0.0
    return np.zeros_like(v)


def _accumulate(slot, delta):
    if slot is None:
        return delta
    if isinstance(slot, tuple):
        return tuple(a + b for a, b in zip(slot, delta))
    return slot + delta


def _map2(f, x, y):
    if isinstance(x, tuple):
        return tuple(f(a, b) for a, b in zip(x, y))
    return f(x, y)


def _map1(f, x):
    if isinstance(x, tuple):
        return tuple(f(a) for a in x)
    return f(x)


# ---------------------------------------------------------------------------
# registered primitives
# ---------------------------------------------------------------------------


@register("add")
def _p_add(x, y):
    return _map2(lambda a, b: a + b, x, y), lambda g: (g, g)


@register("sub")
def _p_sub(x, y):
    return _map2(lambda a, b: a - b, x, y), lambda g: (g, _map1(lambda a: -a, g))


@register("neg")
def _p_neg(x):
    return _map1(lambda a: -a, x), lambda g: (_map1(lambda a: -a, g),)


@register("scale")
def _p_scale(x, c):
    return _map1(lambda a: c * a, x), lambda g: (_map1(lambda a: c * a, g),)


@register("axpy")
def _p_axpy(y, x, c):
    """y + c * x with a compile-time constant c."""
    return _map2(lambda a, b: a + c * b, y, x), lambda g: (g, _map1(lambda a: c * a, g))


@register("cadd")
def _p_cadd(x, const):
    """Add a non-differentiated constant (e.g. the body force)."""
    return _map2(lambda a, b: a + b, x, const), lambda g: (g,)


@register("mul")
def _p_mul(x, y):
    def vjp(g):
        return _map2(lambda a, b: a * b, g, y), _map2(lambda a, b: a * b, g, x)

    return _map2(lambda a, b: a * b, x, y), vjp


@register("tanh")
def _p_tanh(x):
    t = np.tanh(x)
    return t, lambda g: (g * (1.0 - t * t),)


@register("slice1d")
def _p_slice1d(theta, start, shape):
    n = int(np.prod(shape))
    val = theta[start : start + n].reshape(shape)

    def vjp(g):
        out = np.zeros_like(theta)
        out[start : start + n] = np.asarray(g).ravel()
        return (out,)

    return val, vjp


@register("conv")
def _p_conv(x, K, b=None):
    """Periodic convolution of center channels (C, *N) or batched (B, C, *N)."""
    unbatched = x.ndim == K.ndim - 1
    xb = x[None] if unbatched else x
    bias = b if b is not None else np.zeros(K.shape[0], dtype=x.dtype)
    out = _kernels.conv_forward(xb, K, bias)
    has_bias = b is not None

    def vjp(g):
        gb = g[None] if unbatched else g
        dx = _kernels.conv_backward_input(gb, K)
        dK, db = _kernels.conv_backward_kernel(gb, xb, K.shape[2])
        dx = dx[0] if unbatched else dx
        if has_bias:
            return dx, dK, db
        return dx, dK

    return (out[0] if unbatched else out), vjp


@register("collocate")
def _p_collocate(comps):
    return collocate_arrays(comps), lambda g: (collocate_transpose_arrays(g),)


@register("decollocate")
def _p_decollocate(channels):
    val = collocate_transpose_arrays(channels)

    def vjp(g):
        return (collocate_arrays(g),)

    return tuple(val), vjp


@register("convection")
def _p_convection(comps, h):
    return convection_arrays(comps, h), lambda g: (convection_vjp_arrays(comps, g, h),)


@register("diffusion")
def _p_diffusion(comps, h, nu):
    return diffusion_arrays(comps, h, nu), lambda g: (diffusion_arrays(g, h, nu),)


@register("divergence")
def _p_divergence(comps, h):
    return divergence_arrays(comps, h), lambda g: (divergence_transpose_arrays(g, h),)


@register("gradient")
def _p_gradient(p, h):
    return gradient_arrays(p, h), lambda g: (gradient_transpose_arrays(g, h),)


@register("poisson")
def _p_poisson(r, grid):
    return poisson_solve_arrays(r, grid), lambda g: (poisson_solve_arrays(g, grid),)


@register("project")
def _p_project(comps, grid):
    # the projector is an orthogonal projector; on uniform grids its plain
    # transpose coincides with itself
    return project_arrays(comps, grid), lambda g: (project_arrays(g, grid),)


@register("face_average")
def _p_face_average(comps, cmap):
    return face_average_arrays(comps, cmap), lambda g: (
        face_average_transpose_arrays(g, cmap),
    )


@register("volume_average")
def _p_volume_average(comps, cmap, normal_mode="trapezoid"):
    val = volume_average_arrays(comps, cmap, normal_mode)
    return val, lambda g: (volume_average_transpose_arrays(g, cmap, normal_mode),)


@register("sqnorm")
def _p_sqnorm(x):
    if isinstance(x, tuple):
        val = float(sum(np.sum(c * c) for c in x))
        return val, lambda g: (tuple(2.0 * g * c for c in x),)
    val = float(np.sum(x * x))
    return val, lambda g: (2.0 * g * x,)


@register("sadd")
def _p_sadd(a, b):
    return a + b, lambda g: (g, g)


@register("sscale")
def _p_sscale(a, c):
    return c * a, lambda g: (c * g,)


# ---------------------------------------------------------------------------
# user-facing gradient driver and optimizer pieces
# ---------------------------------------------------------------------------


def grad(loss_fn, theta, context=None):
    """Evaluate ``loss_fn`` on a fresh tape and return (loss, dloss/dtheta).

    ``loss_fn(tape, theta_var, context)`` must build the loss from
    registered primitives and return the terminal scalar Var.
    """
    tape = Tape()
    theta_var = tape.leaf(np.asarray(theta, dtype=np.float64), name="theta")
    out = loss_fn(tape, theta_var, context)
    g = tape.grad(out, theta_var)
    return out.value, g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(theta, gradient, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update; returns the new parameters and state."""
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * gradient
    v = beta2 * state.v + (1.0 - beta2) * gradient**2
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    theta_new = theta - lr * mhat / (np.sqrt(vhat) + eps)
    return theta_new, AdamState(m=m, v=v, step=t)


def cosine_lr(iteration, total, lr_start=1e-3, lr_end=1e-6):
    """Cosine annealing from lr_start (iteration 0) to lr_end (iteration total)."""
    if not 0 <= iteration <= total:
        raise ValueError("iteration must lie in [0, total]")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + np.cos(np.pi * iteration / total))


def clip_gradient(gradient, max_norm):
    """Optional global-norm clip (disabled by default in training)."""
    norm = float(np.linalg.norm(gradient))
    if max_norm is not None and norm > max_norm:
        return gradient * (max_norm / norm)
    return gradient
