import numpy as np
import pytest

from mmists import autodiff as ad


def test_row_softmax_symmetry():
    out = ad.row_softmax(ad.constant([[0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_layer_norm_constant_row_near_zero():
    x = ad.constant(np.full((1, 6), 3.0))
    g = ad.constant(np.ones(6))
    b = ad.constant(np.zeros(6))
    out = ad.layer_norm(x, g, b)
    assert np.max(np.abs(out.data)) < 1e-3


def test_matmul_shape_contract():
    a = ad.constant(np.ones((2, 3)))
    b = ad.constant(np.ones((3, 4)))
    assert ad.matmul(a, b).shape == (2, 4)
    with pytest.raises(ad.ShapeMismatch):
        ad.matmul(a, ad.constant(np.ones((4, 3))))


def test_backward_sum_of_squares():
    store = ad.ParamStore()
    store.add("x", [1.0, 2.0])
    tape = ad.Tape()
    x = store.tensor("x", tape)
    xm = ad.constant(np.zeros((1, 2)))  # promote 1-D param via broadcast_add
    row = ad.broadcast_add(xm, x)
    sq = ad.mul(row, row)
    loss = ad.masked_mean(sq, np.ones(1))  # (1,2) mean over single row
    total = ad.matmul(loss, ad.constant(np.ones((2, 1))))
    ad.backward(total)
    np.testing.assert_allclose(store.grads["x"], [2.0, 4.0], atol=1e-12)


def test_unused_parameter_gets_zero_gradient():
    store = ad.ParamStore()
    store.add("used", np.ones((1, 1)))
    store.add("unused", np.ones((1, 1)))
    tape = ad.Tape()
    loss = ad.mul(store.tensor("used", tape), store.tensor("used", tape))
    ad.backward(loss)
    assert np.all(store.grads["unused"] == 0.0)
    np.testing.assert_allclose(store.grads["used"], [[2.0]])


def test_backward_requires_scalar_and_connection():
    store = ad.ParamStore()
    store.add("x", np.ones((2, 2)))
    tape = ad.Tape()
    x = store.tensor("x", tape)
    with pytest.raises(ad.NotScalar):
        ad.backward(x)
    with pytest.raises(ad.DisconnectedGraph):
        ad.backward(ad.constant([[1.0]]))


def test_backward_accumulates_across_calls():
    store = ad.ParamStore()
    store.add("x", np.full((1, 1), 3.0))
    for _ in range(2):
        tape = ad.Tape()
        x = store.tensor("x", tape)
        ad.backward(ad.mul(x, x))
    np.testing.assert_allclose(store.grads["x"], [[12.0]])  # 2 * (2x)


def test_backward_linearity():
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(3, 3))

    def scalar_loss(x, w):
        h = ad.relu(ad.matmul(x, w))
        s = ad.masked_mean(h, np.ones(3))
        return ad.matmul(s, ad.constant(np.ones((3, 1))))

    w0 = rng.normal(size=(3, 3))

    store = ad.ParamStore()
    store.add("w", w0)
    tape = ad.Tape()
    w = store.tensor("w", tape)
    l1 = scalar_loss(ad.constant(x0), w)
    l2 = scalar_loss(ad.constant(2.0 * x0), w)
    ad.backward(ad.add(l1, l2))
    joint = store.grads["w"].copy()

    store2 = ad.ParamStore()
    store2.add("w", w0)
    for xin in (x0, 2.0 * x0):
        tape = ad.Tape()
        w = store2.tensor("w", tape)
        ad.backward(scalar_loss(ad.constant(xin), w))
    np.testing.assert_allclose(joint, store2.grads["w"], atol=1e-12)


def test_forward_determinism_bitwise():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(5, 5))

    def run():
        h = ad.matmul(ad.constant(x), ad.constant(w))
        h = ad.row_softmax(h)
        h = ad.layer_norm(h, ad.constant(np.ones(5)), ad.constant(np.zeros(5)))
        return h.data

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_nonfinite_forward_raises():
    big = ad.constant(np.full((1, 1), 1e308))
    with np.errstate(over="ignore"):
        with pytest.raises(ad.NonFiniteResult):
            ad.mul(big, big)


def test_masked_mean_contract():
    x = ad.constant(np.arange(12.0).reshape(4, 3))
    out = ad.masked_mean(x, np.array([1.0, 0.0, 0.0, 1.0]))
    np.testing.assert_allclose(out.data, [[4.5, 5.5, 6.5]])
    with pytest.raises(ad.EmptyMask):
        ad.masked_mean(x, np.zeros(4))


def test_row_softmax_all_masked_raises():
    x = ad.constant(np.zeros((2, 3)))
    with pytest.raises(ad.AllMasked):
        ad.row_softmax(x, np.zeros(3))


# ---------------------------------------------------------------------------
# gradient checks against central differences


def _scalarize(t):
    # reduce any matrix to a scalar with fixed weights so FD has one output
    r, c = t.shape
    wl = ad.constant(np.linspace(0.3, 1.1, r)[None, :])
    wr = ad.constant(np.linspace(-0.7, 0.9, c)[:, None])
    return ad.matmul(ad.matmul(wl, t), wr)


def test_grad_check_sum_sin():
    rng = np.random.default_rng(11)
    x = rng.normal(size=10)

    def f(t):
        row = ad.broadcast_add(ad.constant(np.zeros((1, 10))), t)
        return ad.matmul(ad.sin(row), ad.constant(np.ones((10, 1))))

    assert ad.grad_check(f, x, eps=1e-5) < 1e-7


def test_grad_check_relu_away_from_kink():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5

    def f(t):
        return _scalarize(ad.relu(t))

    assert ad.grad_check(f, x, eps=1e-6) < 1e-6


def test_grad_check_constant_function():
    def f(t):
        z = ad.mul(t, ad.constant(np.zeros((2, 2))))
        return ad.add(_scalarize(z), ad.constant([[2.0]]))

    assert ad.grad_check(f, np.ones((2, 2)), eps=1e-4) == 0.0


def test_grad_softmax_then_dot():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(5, 1))

    def f(t):
        return ad.matmul(ad.constant(np.ones((1, 4))),
                         ad.matmul(ad.row_softmax(t), ad.constant(w)))

    assert ad.grad_check(f, x, eps=1e-6) < 1e-6


OPS = {
    "matmul": lambda t: ad.matmul(t, ad.constant(np.linspace(-1, 1, 20).reshape(5, 4))),
    "add": lambda t: ad.add(t, ad.constant(np.linspace(0, 1, 20).reshape(4, 5))),
    "scalar_mul": lambda t: ad.scalar_mul(t, -2.5),
    "mul": lambda t: ad.mul(t, ad.constant(np.linspace(1, 2, 20).reshape(4, 5))),
    "transpose": lambda t: ad.transpose(t),
    "concat0": lambda t: ad.concat([t, ad.constant(np.ones((2, 5)))], axis=0),
    "concat1": lambda t: ad.concat([t, ad.constant(np.ones((4, 2)))], axis=1),
    "slice": lambda t: ad.slice_axis(t, 1, 1, 4),
    "gather": lambda t: ad.gather_rows(t, [0, 2, 2, 3]),
    "softmax": lambda t: ad.row_softmax(t),
    "softmax_masked": lambda t: ad.row_softmax(
        t, np.array([1.0, 0.0, 1.0, 1.0, 0.0])),
    "layer_norm": lambda t: ad.layer_norm(
        t, ad.constant(np.linspace(0.5, 1.5, 5)), ad.constant(np.linspace(-1, 1, 5))),
    "relu": lambda t: ad.relu(t),
    "sin": lambda t: ad.sin(t),
    "masked_mean": lambda t: ad.masked_mean(t, np.array([1.0, 0.0, 1.0, 1.0])),
    "broadcast_add_vec": lambda t: ad.broadcast_add(
        t, ad.constant(np.linspace(0, 1, 5))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_core_op_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = rng.normal(size=(4, 5))
    x[np.abs(x) < 1e-4] = 0.3  # keep relu coordinates off the kink
    op = OPS[name]

    def f(t):
        return _scalarize(op(t))

    assert ad.grad_check(f, x, eps=1e-6) < 1e-5


def test_grad_flows_into_affine_params_of_layer_norm():
    rng = np.random.default_rng(21)
    store = ad.ParamStore()
    store.add("gamma", rng.normal(size=6))
    store.add("beta", rng.normal(size=6))
    x = rng.normal(size=(3, 6))

    def loss_fn(s, tape):
        y = ad.layer_norm(ad.constant(x), s.tensor("gamma", tape), s.tensor("beta", tape))
        return _scalarize(y)

    errs = ad.grad_check_params(loss_fn, store, eps=1e-6)
    assert max(errs.values()) < 1e-6


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    store = ad.ParamStore()
    store.add("a.w", rng.normal(size=(3, 4)))
    store.add("b", rng.normal(size=7))
    path = tmp_path / "model.ckpt"
    ad.save_checkpoint(path, store, meta={"d": 8, "note": "x"})
    loaded, meta = ad.load_checkpoint(path)
    assert meta == {"d": 8, "note": "x"}
    assert loaded.names() == store.names()
    for name in store.names():
        assert np.array_equal(loaded.params[name], store.params[name])
