"""MLP kernel, encoding, optimizer and schedule tests.

All finite-difference comparisons run in float64; training dtype (float32)
is only exercised for shape/dtype behavior.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hintfield import numerics as nm


def small_spec(skip=True):
    return nm.MlpSpec(input_dim=9, layer_widths=(16, 16, 16, 5),
                      activations=("softplus", "softplus", "softplus", "none"),
                      skip_layers=frozenset({2}) if skip else frozenset())


def rand_params(spec, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(nm.param_count(spec)) * 0.5


# ---------------------------------------------------------------------------
# Frequency encoding
# ---------------------------------------------------------------------------

class TestEncoding:
    def test_dim(self):
        assert nm.encoded_dim(3, 6) == 3 * (1 + 12)
        assert nm.encoded_dim(5, 4, include_input=False) == 40

    def test_values(self):
        x = np.array([[0.25, -0.5, 1.0]])
        enc = nm.frequency_encode(x, 2)
        assert enc.shape == (1, 15)
        np.testing.assert_allclose(enc[0, :3], x[0])
        np.testing.assert_allclose(enc[0, 3:6], np.sin(np.pi * x[0]))
        np.testing.assert_allclose(enc[0, 6:9], np.cos(np.pi * x[0]))
        np.testing.assert_allclose(enc[0, 9:12], np.sin(2 * np.pi * x[0]))

    def test_deriv_matches_fd(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((10, 3))
        _, d = nm.frequency_encode_with_deriv(x, 5)
        h = 1e-7
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = (nm.frequency_encode(x + e, 5) - nm.frequency_encode(x - e, 5)) / (2 * h)
            cols = fd.reshape(10, 11, 3)[:, :, j]
            np.testing.assert_allclose(d.reshape(10, 11, 3)[:, :, j], cols,
                                       atol=1e-5)

    def test_second_deriv_matches_fd(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((6, 3))
        d2 = nm.frequency_encode_second_deriv(x, 4)
        h = 1e-5
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = (nm.frequency_encode(x + e, 4) - 2 * nm.frequency_encode(x, 4)
                  + nm.frequency_encode(x - e, 4)) / h ** 2
            np.testing.assert_allclose(d2.reshape(6, 9, 3)[:, :, j],
                                       fd.reshape(6, 9, 3)[:, :, j], atol=1e-3)

    def test_vjp_jvp_adjoint(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((8, 3))
        _, d = nm.frequency_encode_with_deriv(x, 6)
        t = rng.standard_normal((8, 3))
        c = rng.standard_normal(d.shape)
        # <c, J t> == <J^T c, t>
        lhs = np.sum(c * nm.encode_jvp(t, d, 3))
        rhs = np.sum(nm.encode_vjp(c, d, 3) * t)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


# ---------------------------------------------------------------------------
# Spec / parameter layout
# ---------------------------------------------------------------------------

class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            nm.MlpSpec(input_dim=0, layer_widths=(4,), activations=("none",))
        with pytest.raises(ValueError):
            nm.MlpSpec(input_dim=3, layer_widths=(4,), activations=("bogus",))
        with pytest.raises(ValueError):
            nm.MlpSpec(input_dim=3, layer_widths=(4, 4), activations=("none", "none"),
                       skip_layers=frozenset({0}))

    def test_param_layout_roundtrip(self):
        spec = small_spec()
        params = rand_params(spec)
        views = nm.param_views(params, spec)
        assert sum(W.size + b.size for W, b in views) == params.size
        # views alias the flat array
        views[0][0][0, 0] = 123.0
        assert params[0] == 123.0

    def test_spec_json_roundtrip(self):
        spec = small_spec()
        assert nm.MlpSpec.from_json(spec.to_json()) == spec

    def test_geometric_init_is_spherical(self):
        """SDF head should approximate ||p|| - r0 at init."""
        bands = 6
        spec = nm.MlpSpec(input_dim=nm.encoded_dim(3, bands),
                          layer_widths=(64,) * 4 + (1,),
                          activations=("softplus",) * 4 + ("none",),
                          skip_layers=frozenset({2}))
        params = nm.init_params(spec, "geometric-sdf", seed=0, r0=0.5,
                                dtype=np.float64)
        rng = np.random.default_rng(0)
        d = rng.standard_normal((64, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        for radius, sign in ((0.1, -1.0), (1.2, 1.0)):
            f, _ = nm.forward(params, spec,
                              nm.frequency_encode(radius * d, bands))
            assert np.all(np.sign(f[:, 0]) == sign)


# ---------------------------------------------------------------------------
# Gradients vs finite differences
# ---------------------------------------------------------------------------

def fd_param_grad(params, spec, x, cot, h=1e-6):
    g = np.zeros_like(params)
    for j in range(params.size):
        p = params.copy(); p[j] += h
        yp, _ = nm.forward(p, spec, x)
        p[j] -= 2 * h
        ym, _ = nm.forward(p, spec, x)
        g[j] = np.sum(cot * (yp - ym)) / (2 * h)
    return g


class TestGradients:
    @pytest.mark.parametrize("skip", [False, True])
    def test_backward_params_and_input(self, skip):
        spec = small_spec(skip)
        params = rand_params(spec)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((7, spec.input_dim))
        cot = rng.standard_normal((7, spec.output_dim))
        y, cache = nm.forward(params, spec, x, want_cache=True)
        gp, gx = nm.backward(params, spec, cache, cot)

        gp_fd = fd_param_grad(params, spec, x, cot)
        rel = np.max(np.abs(gp - gp_fd)) / max(np.max(np.abs(gp_fd)), 1e-12)
        assert rel < 1e-6

        h = 1e-6
        gx_fd = np.zeros_like(x)
        for j in range(spec.input_dim):
            e = np.zeros(spec.input_dim); e[j] = h
            yp, _ = nm.forward(params, spec, x + e)
            ym, _ = nm.forward(params, spec, x - e)
            gx_fd[:, j] = np.sum(cot * (yp - ym), axis=1) / (2 * h)
        rel = np.max(np.abs(gx - gx_fd)) / max(np.max(np.abs(gx_fd)), 1e-12)
        assert rel < 1e-6

    def test_input_gradient_channel(self):
        spec = small_spec()
        params = rand_params(spec, 7)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((5, spec.input_dim))
        gx, _ = nm.input_gradient(params, spec, x, out_index=2)
        h = 1e-6
        for j in range(0, spec.input_dim, 3):
            e = np.zeros(spec.input_dim); e[j] = h
            yp, _ = nm.forward(params, spec, x + e)
            ym, _ = nm.forward(params, spec, x - e)
            np.testing.assert_allclose(gx[:, j], (yp - ym)[:, 2] / (2 * h),
                                       rtol=1e-6, atol=1e-9)

    def test_forward_tangent_is_jvp(self):
        spec = small_spec()
        params = rand_params(spec, 9)
        rng = np.random.default_rng(10)
        x = rng.standard_normal((6, spec.input_dim))
        t = rng.standard_normal((6, spec.input_dim))
        _, cache = nm.forward(params, spec, x, want_cache=True)
        yd, _ = nm.forward_tangent(params, spec, cache, t)
        h = 1e-7
        yp, _ = nm.forward(params, spec, x + h * t)
        ym, _ = nm.forward(params, spec, x - h * t)
        np.testing.assert_allclose(yd, (yp - ym) / (2 * h), atol=1e-6)

    def test_second_order_param_grad(self):
        """d/d(params) of sum <a, grad_x y_0> against double finite
        differences (the Eikonal double-differentiation path)."""
        spec = small_spec()
        params = rand_params(spec, 11)
        rng = np.random.default_rng(12)
        x = rng.standard_normal((4, spec.input_dim))
        a = rng.standard_normal((4, spec.input_dim))

        def scalar(p):
            y, cache = nm.forward(p, spec, x, want_cache=True)
            gy = np.zeros_like(y); gy[:, 0] = 1.0
            _, gx = nm.backward(p, spec, cache, gy)
            return np.sum(a * gx)

        _, cache = nm.forward(params, spec, x, want_cache=True)
        _, tcache = nm.forward_tangent(params, spec, cache, a)
        sel = np.zeros((4, spec.output_dim)); sel[:, 0] = 1.0
        gp = nm.gradient_param_backward(params, spec, cache, tcache, sel)

        h = 1e-5
        idx = rng.choice(params.size, size=60, replace=False)
        worst = 0.0
        for j in idx:
            p = params.copy(); p[j] += h
            sp = scalar(p)
            p[j] -= 2 * h
            sm = scalar(p)
            fd = (sp - sm) / (2 * h)
            worst = max(worst, abs(fd - gp[j]) / max(abs(fd), abs(gp[j]), 1e-8))
        assert worst < 1e-2

    def test_second_order_input_grad_is_hvp(self):
        """The optional input gradient equals the Hessian-vector product."""
        spec = small_spec()
        params = rand_params(spec, 13)
        rng = np.random.default_rng(14)
        x = rng.standard_normal((3, spec.input_dim))
        a = rng.standard_normal((3, spec.input_dim))
        _, cache = nm.forward(params, spec, x, want_cache=True)
        _, tcache = nm.forward_tangent(params, spec, cache, a)
        sel = np.zeros((3, spec.output_dim)); sel[:, 0] = 1.0
        _, gx = nm.gradient_param_backward(params, spec, cache, tcache, sel,
                                           want_input_grad=True)
        h = 1e-5
        gp, _ = nm.input_gradient(params, spec, x + h * a)
        gm, _ = nm.input_gradient(params, spec, x - h * a)
        np.testing.assert_allclose(gx, (gp - gm) / (2 * h), atol=1e-4)

    def test_non_finite_input_rejected(self):
        spec = small_spec()
        params = rand_params(spec)
        x = np.zeros((2, spec.input_dim))
        x[0, 0] = np.nan
        with pytest.raises(ValueError):
            nm.forward(params, spec, x)


# ---------------------------------------------------------------------------
# Adam + schedule
# ---------------------------------------------------------------------------

class TestAdam:
    def test_bias_corrected_first_step(self):
        params = np.zeros(4)
        state = nm.AdamState.for_params(params)
        g = np.array([1.0, -2.0, 0.5, 0.0])
        nm.adam_step(state, params, g, lr=0.1)
        # first bias-corrected step moves by ~lr * sign(g)
        np.testing.assert_allclose(params[:3], -0.1 * np.sign(g[:3]), rtol=1e-6)
        assert params[3] == 0.0

    def test_rejects_nan_grads(self):
        params = np.zeros(2)
        state = nm.AdamState.for_params(params)
        with pytest.raises(FloatingPointError):
            nm.adam_step(state, params, np.array([np.nan, 0.0]), lr=0.1)

    def test_converges_on_quadratic(self):
        rng = np.random.default_rng(0)
        target = rng.standard_normal(8)
        params = np.zeros(8)
        state = nm.AdamState.for_params(params)
        for _ in range(800):
            nm.adam_step(state, params, params - target, lr=0.05)
        np.testing.assert_allclose(params, target, atol=1e-3)


class TestSchedule:
    def test_shape(self):
        cfg = nm.ScheduleConfig(lr0=1e-3, warmup_iters=100, total_iters=1000,
                                end_factor=0.05)
        assert nm.lr_at(0, cfg) == 0.0
        assert nm.lr_at(50, cfg) == pytest.approx(5e-4)
        assert nm.lr_at(100, cfg) == pytest.approx(1e-3)
        assert nm.lr_at(1000, cfg) == pytest.approx(5e-5)
        vals = [nm.lr_at(i, cfg) for i in range(100, 1001)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            nm.ScheduleConfig(lr0=0.0, warmup_iters=0, total_iters=10)
        with pytest.raises(ValueError):
            nm.ScheduleConfig(lr0=1e-3, warmup_iters=20, total_iters=10)
        cfg = nm.ScheduleConfig(lr0=1e-3, warmup_iters=0, total_iters=10)
        with pytest.raises(ValueError):
            nm.lr_at(11, cfg)


# ---------------------------------------------------------------------------
# Property tests
# ---------------------------------------------------------------------------

class TestProperties:
    @given(st.floats(-50.0, 50.0))
    def test_softplus_positive_and_above_relu(self, z):
        v = nm._act("softplus", np.array([z]), 100.0)[0]
        tol = 1e-12 * max(1.0, abs(z))
        assert v >= max(z, 0.0) - tol
        assert v - max(z, 0.0) <= np.log(2.0) / 100.0 + tol

    @given(st.floats(-50.0, 50.0))
    def test_softplus_deriv_in_unit_interval(self, z):
        d = nm._act_deriv("softplus", np.array([z]), 100.0)[0]
        assert 0.0 <= d <= 1.0

    @settings(max_examples=30)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_forward_deterministic(self, seed):
        spec = small_spec()
        params = rand_params(spec, seed % 100)
        x = np.random.default_rng(seed).standard_normal((3, spec.input_dim))
        y1, _ = nm.forward(params, spec, x)
        y2, _ = nm.forward(params, spec, x)
        assert np.array_equal(y1, y2)
