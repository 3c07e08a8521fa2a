import numpy as np
import pytest

from mmists import kernels


RNG = np.random.default_rng(101)


def _random_case(r=7, c=11):
    x = RNG.normal(size=(r, c))
    mask = (RNG.uniform(size=c) < 0.7).astype(np.float64)
    if mask.sum() == 0:
        mask[0] = 1.0
    return x, mask


@pytest.mark.parametrize("trial", range(5))
def test_softmax_paths_agree(trial):
    x, mask = _random_case()
    a = kernels.ACTIVE_KERNELS["softmax_rows"](x, mask)
    b = kernels.NUMPY_KERNELS["softmax_rows"](x, mask)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_softmax_rows_sum_to_one_and_mask_zero():
    x, mask = _random_case()
    p = kernels.softmax_rows(x, mask)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p[:, mask == 0.0] == 0.0)
    assert np.all(p >= 0.0)


def test_softmax_vjp_matches_loop_oracle():
    x, mask = _random_case(5, 6)
    p = kernels.softmax_rows(x, mask)
    g = RNG.normal(size=p.shape)
    got = kernels.softmax_rows_vjp(p, g, mask)
    # oracle: full Jacobian of each row, entry by entry
    want = np.zeros_like(p)
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if mask[j] == 0.0:
                continue
            acc = 0.0
            for k in range(p.shape[1]):
                jac = p[i, k] * ((1.0 if j == k else 0.0) - p[i, j])
                acc += g[i, k] * jac
            want[i, j] = acc
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_layer_norm_paths_agree():
    x = RNG.normal(size=(6, 9))
    gamma = RNG.normal(size=9)
    beta = RNG.normal(size=9)
    ya, xha, isa = kernels.ACTIVE_KERNELS["layer_norm_fwd"](x, gamma, beta, 1e-5)
    yb, xhb, isb = kernels.NUMPY_KERNELS["layer_norm_fwd"](x, gamma, beta, 1e-5)
    np.testing.assert_allclose(ya, yb, atol=1e-12)
    np.testing.assert_allclose(xha, xhb, atol=1e-12)
    np.testing.assert_allclose(isa, isb, atol=1e-12)
    g = RNG.normal(size=x.shape)
    outs_a = kernels.ACTIVE_KERNELS["layer_norm_vjp"](g, xha, isa, gamma)
    outs_b = kernels.NUMPY_KERNELS["layer_norm_vjp"](g, xhb, isb, gamma)
    for a, b in zip(outs_a, outs_b):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_layer_norm_constant_row_is_beta():
    x = np.full((3, 8), 2.5)
    gamma = np.ones(8)
    beta = np.zeros(8)
    y, _, _ = kernels.layer_norm_fwd(x, gamma, beta, 1e-5)
    assert np.max(np.abs(y)) < 1e-3


def test_bilinear_preserves_corners():
    src = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = kernels.bilinear_resize(src, 4, 4)
    assert out[0, 0] == src[0, 0]
    assert out[0, 3] == src[0, 1]
    assert out[3, 0] == src[1, 0]
    assert out[3, 3] == src[1, 1]
    # interior of a bilinear ramp is exactly the ramp itself
    ys = np.linspace(0, 1, 4)[:, None]
    xs = np.linspace(0, 1, 4)[None, :]
    want = 2.0 * ys + 1.0 * xs
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_bilinear_paths_agree():
    src = RNG.normal(size=(5, 17))
    a = kernels.ACTIVE_KERNELS["bilinear_resize"](src, 12, 8)
    b = kernels.NUMPY_KERNELS["bilinear_resize"](src, 12, 8)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_bilinear_degenerate_single_row():
    src = np.array([[1.0, 2.0, 3.0]])
    out = kernels.bilinear_resize(src, 3, 3)
    np.testing.assert_allclose(out[0], out[1])
    np.testing.assert_allclose(out[1], out[2])


def test_adam_update_matches_loop_oracle():
    p = RNG.normal(size=(4, 3))
    g = RNG.normal(size=(4, 3))
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    t = 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    want = p.copy()
    wm, wv = m.copy(), v.copy()
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            wm[i, j] = b1 * wm[i, j] + (1 - b1) * g[i, j]
            wv[i, j] = b2 * wv[i, j] + (1 - b2) * g[i, j] ** 2
            want[i, j] -= lr * (wm[i, j] / bc1) / (np.sqrt(wv[i, j] / bc2) + eps)
    kernels.adam_update(p, g, m, v, lr, b1, b2, eps, bc1, bc2)
    np.testing.assert_allclose(p, want, atol=1e-14)
    np.testing.assert_allclose(m, wm, atol=1e-14)
    np.testing.assert_allclose(v, wv, atol=1e-14)
