import numpy as np
import pytest

from ethcast.autotensor import (
    AdamState, Parameter, adam_step, available_backends, conv3d_backward, conv3d_forward,
    get_kernels, gradcheck, maxpool2_spatial_backward, maxpool2_spatial_forward,
    mse_loss_backward, mse_loss_forward, relu_backward, relu_forward, upsample2_nearest,
)
from ethcast.autotensor import checks
from ethcast.errors import ArgumentError, NumericFailure


def _combos():
    out = [("python", None)]
    if "compiled" in available_backends():
        for level in get_kernels("compiled").simd_levels():
            out.append(("compiled", level))
    return out


@pytest.fixture(params=_combos(), ids=lambda c: c[0] if c[1] is None else f"{c[0]}-{c[1]}")
def kernels(request):
    name, level = request.param
    mod = get_kernels(name)
    if level is None:
        yield mod
        return
    before = mod.get_simd()
    mod.set_simd(level)
    try:
        yield mod
    finally:
        mod.set_simd(before)


def conv_oracle(x, w, b, pad):
    """Direct nested-loop cross-correlation with zero padding."""
    bsz, cin, t, h, wd = x.shape
    cout, _, kt, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad[0],) * 2, (pad[1],) * 2, (pad[2],) * 2))
    to, ho, wo = (xp.shape[2] - kt + 1, xp.shape[3] - kh + 1, xp.shape[4] - kw + 1)
    y = np.zeros((bsz, cout, to, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(to):
                for j in range(ho):
                    for k in range(wo):
                        s = b[o]
                        for c in range(cin):
                            for a in range(kt):
                                for p in range(kh):
                                    for q in range(kw):
                                        s += xp[n, c, i + a, j + p, k + q] * w[o, c, a, p, q]
                        y[n, o, i, j, k] = s
    return y


def test_ones_kernel_on_2x2():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 1, 2, 2)
    w = np.ones((1, 1, 1, 3, 3))
    y = conv3d_forward(x, w, np.zeros(1))
    np.testing.assert_array_equal(y, conv_oracle(x, w, np.zeros(1), (0, 1, 1)))
    np.testing.assert_array_equal(y[0, 0, 0], [[10.0, 10.0], [10.0, 10.0]])


def test_scaling_and_identity_kernels(kernels, rng):
    x = rng.standard_normal((2, 1, 3, 4, 5))
    y = conv3d_forward(x, np.full((1, 1, 1, 1, 1), 2.0), np.zeros(1), kernels=kernels)
    np.testing.assert_array_equal(y, 2 * x)
    delta = np.zeros((1, 1, 3, 3, 3))
    delta[0, 0, 1, 1, 1] = 1.0
    np.testing.assert_array_equal(conv3d_forward(x, delta, np.zeros(1), kernels=kernels), x)


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 2e-5)])
@pytest.mark.parametrize("kshape,pad", [((3, 3, 3), None), ((1, 3, 3), None), ((2, 3, 1), (0, 1, 0))])
def test_conv_matches_oracle(kernels, rng, dtype, tol, kshape, pad):
    x = rng.standard_normal((2, 3, 3, 5, 6)).astype(dtype)
    w = rng.standard_normal((4, 3) + kshape).astype(dtype)
    b = rng.standard_normal(4).astype(dtype)
    p = pad if pad is not None else tuple(k // 2 for k in kshape)
    y = conv3d_forward(x, w, b, pad, kernels=kernels)
    ref = conv_oracle(x.astype(np.float64), w.astype(np.float64), b.astype(np.float64), p)
    assert y.dtype == dtype
    np.testing.assert_allclose(y, ref, rtol=tol, atol=tol * 10)


def test_conv_backward_matches_einsum(kernels, rng):
    x = rng.standard_normal((2, 5, 3, 8, 7))
    w = rng.standard_normal((6, 5, 3, 3, 3))
    g = rng.standard_normal((2, 6, 3, 8, 7))
    gx, gw, gb = conv3d_backward(g, x, w, kernels=kernels)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4))
    np.testing.assert_allclose(gw, np.einsum("nothw,ncthwijk->ocijk", g, win), rtol=1e-11, atol=1e-11)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3, 4)), rtol=1e-12)
    # input gradient through the adjoint on the padded grid
    gxp = np.zeros_like(xp)
    for a in range(3):
        for p in range(3):
            for q in range(3):
                gxp[:, :, a:a + 3, p:p + 8, q:q + 7] += np.einsum("nothw,oc->ncthw", g, w[:, :, a, p, q])
    np.testing.assert_allclose(gx, gxp[:, :, 1:-1, 1:-1, 1:-1], rtol=1e-11, atol=1e-11)


def test_zero_grad_out(kernels, rng):
    x = rng.standard_normal((1, 2, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3, 3))
    for a in conv3d_backward(np.zeros((1, 3, 2, 4, 4)), x, w, kernels=kernels):
        assert not a.any()


def test_1x1_weight_grad(kernels, rng):
    x = rng.standard_normal((2, 1, 2, 3, 3))
    g = rng.standard_normal((2, 1, 2, 3, 3))
    _, gw, _ = conv3d_backward(g, x, np.ones((1, 1, 1, 1, 1)), kernels=kernels)
    assert gw.ravel()[0] == pytest.approx(float(np.sum(x * g)), rel=1e-13)


def test_adjoint_identity(kernels, rng):
    x = rng.standard_normal((2, 3, 4, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3, 3))
    y = rng.standard_normal((2, 4, 4, 6, 5))
    lhs = np.sum(conv3d_forward(x, w, np.zeros(4), kernels=kernels) * y)
    gx, gw, _ = conv3d_backward(y, x, w, kernels=kernels)
    assert abs(lhs - np.sum(x * gx)) <= 1e-10 * abs(lhs)
    assert abs(lhs - np.sum(w * gw)) <= 1e-10 * abs(lhs)


def test_linearity(kernels, rng):
    x1, x2 = rng.standard_normal((2, 1, 2, 3, 6, 6))
    w1, w2 = rng.standard_normal((2, 3, 2, 3, 3, 3))
    z = np.zeros(3)
    f = lambda x, w: conv3d_forward(x, w, z, kernels=kernels)
    scale = np.abs(f(x1, w1)).max()
    assert np.abs(f(x1 + 2 * x2, w1) - f(x1, w1) - 2 * f(x2, w1)).max() <= 1e-12 * scale * 10
    assert np.abs(f(x1, w1 - w2) - f(x1, w1) + f(x1, w2)).max() <= 1e-12 * scale * 10


def test_repeat_bitwise(kernels, rng):
    x = rng.standard_normal((2, 4, 3, 16, 16)).astype(np.float32)
    w = rng.standard_normal((8, 4, 3, 3, 3)).astype(np.float32)
    g = rng.standard_normal((2, 8, 3, 16, 16)).astype(np.float32)
    a = conv3d_forward(x, w, np.zeros(8, np.float32), kernels=kernels)
    b = conv3d_forward(x, w, np.zeros(8, np.float32), kernels=kernels)
    assert a.tobytes() == b.tobytes()
    r1 = conv3d_backward(g, x, w, kernels=kernels)
    r2 = conv3d_backward(g, x, w, kernels=kernels)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(r1, r2))


def test_backends_agree(rng):
    if "compiled" not in available_backends():
        pytest.skip("compiled kernels not built")
    x = rng.standard_normal((2, 6, 4, 12, 10))
    w = rng.standard_normal((5, 6, 3, 3, 3))
    g = rng.standard_normal((2, 5, 4, 12, 10))
    py, c = get_kernels("python"), get_kernels("compiled")
    np.testing.assert_allclose(conv3d_forward(x, w, np.zeros(5), kernels=py),
                               conv3d_forward(x, w, np.zeros(5), kernels=c), rtol=1e-12, atol=1e-12)
    for a, b in zip(conv3d_backward(g, x, w, kernels=py), conv3d_backward(g, x, w, kernels=c)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-11)


def test_conv_shape_errors():
    with pytest.raises(ArgumentError):
        conv3d_forward(np.zeros((1, 2, 2, 3, 3)), np.zeros((1, 3, 1, 1, 1)), np.zeros(1))
    with pytest.raises(ArgumentError):
        conv3d_forward(np.zeros((1, 1, 2, 3, 3)), np.zeros((1, 1, 2, 2, 2)), np.zeros(1))


def test_gradchecks(kernels):
    assert checks.check_conv3d(kernels=kernels).passed
    assert checks.check_conv3d(shape=(1, 2, 3, 4, 4), kshape=(2, 1, 3), padding=(0, 0, 1),
                               kernels=kernels).passed


@pytest.mark.parametrize("check", [checks.check_relu, checks.check_maxpool, checks.check_upsample,
                                   checks.check_mse])
def test_layer_gradchecks(check):
    rep = check()
    assert rep.passed, rep.format()


def test_linear_layer_gradcheck_tight(rng):
    t = {"input": rng.standard_normal((2, 3, 2, 3, 3)), "weight": rng.standard_normal((2, 3, 1, 1, 1))}
    r = rng.standard_normal((2, 2, 2, 3, 3))
    z = np.zeros(2)

    def fn():
        y = conv3d_forward(t["input"], t["weight"], z)
        gx, gw, _ = conv3d_backward(r, t["input"], t["weight"])
        return float(np.sum(y * r)), {"input": gx, "weight": gw}

    # the loss is linear in every single coordinate, so a wide step adds no
    # truncation error and keeps cancellation small
    rep = gradcheck(fn, t, eps=1e-3)
    assert rep.max_rel_error < 1e-9


def test_corrupted_backward_fails(rng):
    t = {"input": rng.standard_normal((1, 1, 1, 4, 4))}
    r = rng.standard_normal((1, 1, 1, 4, 4))

    def fn():
        return float(np.sum(relu_forward(t["input"]) * r)), {"input": 0.5 * relu_backward(r, t["input"])}

    rep = gradcheck(fn, t)
    assert not rep.passed
    assert "FAIL" in rep.format() and "worst coordinates" in rep.format()


def test_relu_mse_pool_cases():
    x = -np.ones((1, 1, 1, 2, 2))
    assert not relu_forward(x).any()
    assert not relu_backward(np.ones_like(x), x).any()
    p = np.arange(8.0).reshape(2, 4)
    assert mse_loss_forward(p, p) == 0.0 and not mse_loss_backward(p, p).any()
    c = np.full((1, 2, 3, 4, 6), 1.5)
    y, idx = maxpool2_spatial_forward(c)
    assert y.shape == (1, 2, 3, 2, 3)
    np.testing.assert_array_equal(upsample2_nearest(y), c)
    g = maxpool2_spatial_backward(np.ones_like(y), idx, c.shape)
    assert g.sum() == y.size


def test_adam_zero_gradient():
    p = Parameter("w", np.array([1.0, -2.0]))
    adam_step([p], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adam_constant_gradient_step():
    p = Parameter("w", np.zeros(3))
    st = AdamState()
    for _ in range(200):
        before = p.value.copy()
        p.grad[:] = [3.0, -0.01, 50.0]
        adam_step([p], st, lr=0.01)
    np.testing.assert_allclose(before - p.value, 0.01 * np.sign([3.0, -0.01, 50.0]), rtol=1e-5)


def test_adam_deterministic_and_nonfinite(rng):
    g = rng.standard_normal((5, 4))

    def run():
        p = Parameter("w", np.ones((5, 4)))
        st = AdamState()
        for k in range(10):
            p.grad[:] = g * (k + 1)
            adam_step([p], st, lr=1e-3)
        return p.value

    assert run().tobytes() == run().tobytes()
    p = Parameter("w", np.ones(2))
    p.grad[:] = [np.nan, 1.0]
    with pytest.raises(NumericFailure):
        adam_step([p], AdamState(), lr=1e-3)
    np.testing.assert_array_equal(p.value, [1.0, 1.0])
