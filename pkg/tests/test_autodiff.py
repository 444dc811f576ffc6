import numpy as np
import pytest

from stagles.autodiff import (
    AdamState,
    Tape,
    UnregisteredPrimitiveError,
    adam_step,
    clip_gradient,
    cosine_lr,
    grad,
)
from stagles.filters import CoarseningMap
from stagles.grid import make_grid


def _flatten(x):
    if isinstance(x, tuple):
        return np.concatenate([np.asarray(c).ravel() for c in x])
    if isinstance(x, float):
        return np.array([x])
    return np.asarray(x).ravel()


def _dot(x, y):
    return float(np.dot(_flatten(x), _flatten(y)))


def _perturb(x, v, h):
    if isinstance(x, tuple):
        return tuple(a + h * b for a, b in zip(x, v))
    return x + h * v


def _random_like(x, rng):
    if isinstance(x, tuple):
        return tuple(rng.standard_normal(np.shape(c)) for c in x)
    if isinstance(x, float):
        return float(rng.standard_normal())
    return rng.standard_normal(np.shape(x))


def _eval(name, inputs, statics):
    tape = Tape()
    return tape.apply(name, *[tape.leaf(x) for x in inputs], **statics).value


def _dot_test(name, inputs, statics, rng, linear=False, h=1e-7, tol=None, wrt=None):
    """<w, J v> must match <J^T w, v>.

    For (per-argument) linear primitives the Jacobian action is evaluated
    exactly as f(x + v) - f(x); nonlinear ones use central differences,
    whose float64 cancellation floor sets the looser tolerance.
    """
    if tol is None:
        tol = 1e-12 if linear else 1e-7
    tape = Tape()
    vars_ = [tape.leaf(x) for x in inputs]
    out = tape.apply(name, *vars_, **statics)
    w = _random_like(out.value, rng)
    grads = tape.nodes[out.idx].vjp(w)
    wrt = range(len(inputs)) if wrt is None else wrt
    for i in wrt:
        v = _random_like(inputs[i], rng)
        plus = list(inputs)
        plus[i] = _perturb(inputs[i], v, 1.0 if linear else h)
        if linear:
            jv = _flatten(_eval(name, plus, statics)) - _flatten(out.value)
        else:
            minus = list(inputs)
            minus[i] = _perturb(inputs[i], v, -h)
            jv = (_flatten(_eval(name, plus, statics)) - _flatten(_eval(name, minus, statics))) / (
                2 * h
            )
        lhs = float(np.dot(_flatten(w), jv))
        rhs = _dot(grads[i], v)
        scale = max(abs(lhs), abs(rhs), 1e-12)
        assert abs(lhs - rhs) / scale < tol, f"{name} input {i}: {lhs} vs {rhs}"


class TestPrimitivePullbacks:
    def setup_method(self):
        self.grid = make_grid(2, (8, 8), 1.0)
        self.rng = np.random.default_rng(0)

    def _field(self):
        return tuple(self.rng.standard_normal(self.grid.N) for _ in range(2))

    def test_elementwise(self):
        g = self.grid
        rng = self.rng
        _dot_test("add", [self._field(), self._field()], {}, rng, linear=True)
        _dot_test("sub", [self._field(), self._field()], {}, rng, linear=True)
        _dot_test("neg", [self._field()], {}, rng, linear=True)
        _dot_test("scale", [self._field()], {"c": 1.7}, rng, linear=True)
        _dot_test("axpy", [self._field(), self._field()], {"c": -0.3}, rng, linear=True)
        _dot_test("mul", [rng.standard_normal(g.N), rng.standard_normal(g.N)], {}, rng)
        _dot_test("tanh", [rng.standard_normal(g.N)], {}, rng)
        _dot_test("cadd", [self._field()], {"const": self._field()}, rng, linear=True)

    def test_field_operators(self):
        g = self.grid
        rng = self.rng
        _dot_test("convection", [self._field()], {"h": g.h}, rng)
        _dot_test("diffusion", [self._field()], {"h": g.h, "nu": 0.05}, rng, linear=True)
        _dot_test("divergence", [self._field()], {"h": g.h}, rng, linear=True)
        _dot_test("gradient", [rng.standard_normal(g.N)], {"h": g.h}, rng, linear=True)
        _dot_test("poisson", [rng.standard_normal(g.N)], {"grid": g}, rng, linear=True)
        _dot_test("project", [self._field()], {"grid": g}, rng, linear=True)

    def test_filters(self):
        g = self.grid
        rng = self.rng
        cmap = CoarseningMap.create(g, (4, 4))
        _dot_test("face_average", [self._field()], {"cmap": cmap}, rng, linear=True)
        _dot_test("volume_average", [self._field()], {"cmap": cmap}, rng, linear=True)

    def test_cnn_pieces(self):
        rng = self.rng
        g = self.grid
        x = rng.standard_normal((3,) + g.N)
        K = rng.standard_normal((2, 3, 5, 5)) * 0.1
        b = rng.standard_normal(2) * 0.1
        # conv is linear in each argument separately
        _dot_test("conv", [x, K, b], {}, rng, linear=True, wrt=[0])
        _dot_test("conv", [x, K, b], {}, rng, linear=True, wrt=[1])
        _dot_test("conv", [x, K, b], {}, rng, linear=True, wrt=[2])
        _dot_test("conv", [x, K], {}, rng, linear=True)
        _dot_test("collocate", [self._field()], {}, rng, linear=True)
        _dot_test("decollocate", [rng.standard_normal((2,) + g.N)], {}, rng, linear=True)
        theta = rng.standard_normal(40)
        _dot_test("slice1d", [theta], {"start": 4, "shape": (3, 4)}, rng, linear=True)

    def test_scalars(self):
        rng = self.rng
        # quadratic: central differences are truncation-free, so a larger
        # step just lowers the cancellation noise
        _dot_test("sqnorm", [self._field()], {}, rng, h=1e-3)
        _dot_test("sqnorm", [rng.standard_normal(self.grid.N)], {}, rng, h=1e-3)
        _dot_test("sadd", [0.7, -1.2], {}, rng, linear=True)
        _dot_test("sscale", [1.5], {"c": 3.0}, rng, linear=True)

    def test_projection_pullback_is_projection(self):
        # the adjoint of the projector equals the projector on uniform grids
        from stagles.operators import project_arrays

        g = self.grid
        w = self._field()
        tape = Tape()
        out = tape.apply("project", tape.leaf(self._field()), grid=g)
        back = tape.nodes[out.idx].vjp(w)[0]
        direct = project_arrays(w, g)
        for a, b in zip(back, direct):
            np.testing.assert_allclose(a, b, atol=1e-13)


class TestTapeMechanics:
    def test_grad_of_squared_norm_is_2theta(self):
        theta = np.arange(5, dtype=float)

        def loss(tape, th, ctx):
            return tape.apply("sqnorm", th)

        value, g = grad(loss, theta)
        assert value == pytest.approx(float(np.sum(theta**2)))
        np.testing.assert_allclose(g, 2 * theta)

    def test_unregistered_primitive(self):
        tape = Tape()
        x = tape.leaf(np.ones(3))
        with pytest.raises(UnregisteredPrimitiveError):
            tape.apply("definitely_not_registered", x)

    def test_nonfinite_adjoint_diagnostics(self):
        tape = Tape()
        x = tape.leaf(np.array([1.0, 2.0]))
        y = tape.apply("mul", x, tape.leaf(np.array([np.inf, 1.0])))
        out = tape.apply("sqnorm", y)
        with pytest.raises(FloatingPointError):
            tape.backward(out)

    def test_backward_needs_scalar(self):
        tape = Tape()
        x = tape.leaf(np.ones(3))
        y = tape.apply("neg", x)
        with pytest.raises(TypeError):
            tape.backward(y)

    def test_gradient_deterministic(self):
        rng = np.random.default_rng(1)
        theta = rng.standard_normal(30)
        target = rng.standard_normal((3, 4))

        def loss(tape, th, ctx):
            K = tape.apply("slice1d", th, start=0, shape=(3, 4))
            diff = tape.apply("sub", K, tape.leaf(target))
            return tape.apply("sqnorm", diff)

        _, g1 = grad(loss, theta)
        _, g2 = grad(loss, theta)
        np.testing.assert_array_equal(g1, g2)


class TestAdam:
    def test_zero_gradient_keeps_theta(self):
        theta = np.array([1.0, -2.0])
        new_theta, _ = adam_step(theta, np.zeros(2), AdamState.zeros(2), lr=0.1)
        np.testing.assert_array_equal(new_theta, theta)

    def test_zero_gradient_decays_moments(self):
        state = AdamState.zeros(2)
        state.m[:] = 0.5
        state.v[:] = 0.25
        _, new_state = adam_step(np.zeros(2), np.zeros(2), state, lr=0.0)
        np.testing.assert_allclose(new_state.m, 0.9 * state.m)
        np.testing.assert_allclose(new_state.v, 0.999 * state.v)

    def test_first_step_is_signed_lr(self):
        theta = np.zeros(4)
        g = np.array([3.0, -0.5, 1e-3, -2e4])
        new_theta, _ = adam_step(theta, g, AdamState.zeros(4), lr=0.01)
        np.testing.assert_allclose(new_theta, -0.01 * np.sign(g), rtol=1e-4)

    def test_zero_lr_is_identity(self):
        theta = np.array([0.3, 0.7])
        state = AdamState.zeros(2)
        for _ in range(2):
            theta_new, state = adam_step(theta, np.ones(2), state, lr=0.0)
            np.testing.assert_array_equal(theta_new, theta)
            theta = theta_new


class TestSchedules:
    def test_cosine_endpoints(self):
        assert cosine_lr(0, 100) == pytest.approx(1e-3)
        assert cosine_lr(100, 100) == pytest.approx(1e-6)

    def test_cosine_midpoint(self):
        assert cosine_lr(50, 100) == pytest.approx((1e-3 + 1e-6) / 2)

    def test_cosine_bounds(self):
        with pytest.raises(ValueError):
            cosine_lr(101, 100)

    def test_clip(self):
        g = np.array([3.0, 4.0])
        np.testing.assert_allclose(clip_gradient(g, 1.0), g / 5.0)
        np.testing.assert_array_equal(clip_gradient(g, None), g)
        np.testing.assert_array_equal(clip_gradient(g, 10.0), g)
