import numpy as np
import pytest

from mmists import autodiff as ad
from mmists import extractor, layers
from mmists.embedding import DimensionMismatch


def _store(n_vars, d_m, k, seed=0):
    store = ad.ParamStore()
    extractor.init_extractor_params(store, n_vars, d_m, k, np.random.default_rng(seed))
    return store


def test_identical_tokens_give_token_value_regardless_of_query():
    # convexity: softmax weights over identical value rows return that row
    rng = np.random.default_rng(1)
    v = rng.normal(size=8)
    e = ad.constant(np.tile(v, (10, 1)))
    q = ad.constant(rng.normal(size=(4, 8)))
    out, _ = layers.attention_heads(q, e, e, heads=1)
    for row in out.data:
        np.testing.assert_allclose(row, v, atol=1e-12)


def test_extract_shape_contract():
    store = _store(5, 32, 2, seed=2)
    e = ad.constant(np.random.default_rng(3).normal(size=(17, 32)))
    out = extractor.extract(e, store, 2, 4, None)
    assert out.data.shape == (5, 32)


def test_output_shape_for_any_token_count():
    store = _store(3, 8, 1, seed=4)
    for s in (1, 2, 9, 40):
        e = ad.constant(np.random.default_rng(s).normal(size=(s, 8)))
        assert extractor.extract(e, store, 1, 2, None).data.shape == (3, 8)


def test_cross_attention_rows_sum_to_one():
    store = _store(4, 8, 2, seed=5)
    e = ad.constant(np.random.default_rng(6).normal(size=(11, 8)))
    probs = []
    extractor.extract(e, store, 2, 2, None, collect=probs)
    assert probs
    for p in probs:
        np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-9)


def test_scaled_tokens_keep_row_stochastic_attention():
    store = _store(4, 8, 1, seed=7)
    base = np.random.default_rng(8).normal(size=(9, 8))
    for scale in (0.1, 1.0, 250.0):
        probs = []
        extractor.extract(ad.constant(base * scale), store, 1, 2, None, collect=probs)
        for p in probs:
            np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-9)


def test_zero_layers_returns_learnable_queries():
    store = _store(3, 8, 0, seed=9)
    e = ad.constant(np.random.default_rng(10).normal(size=(5, 8)))
    out = extractor.extract(e, store, 0, 2, None)
    np.testing.assert_array_equal(out.data, store.params["queries"])


def test_extract_deterministic():
    store = _store(3, 8, 2, seed=11)
    e = ad.constant(np.random.default_rng(12).normal(size=(7, 8)))
    a = extractor.extract(e, store, 2, 2, None).data
    b = extractor.extract(e, store, 2, 2, None).data
    assert np.array_equal(a, b)


def test_dimension_mismatch():
    store = _store(3, 8, 1, seed=13)
    e = ad.constant(np.random.default_rng(14).normal(size=(5, 6)))
    with pytest.raises(DimensionMismatch):
        extractor.extract(e, store, 1, 2, None)


def test_gradient_wrt_queries():
    store = _store(3, 8, 1, seed=15)
    e_data = np.random.default_rng(16).normal(size=(6, 8))
    wl = np.ones((1, 3))
    wr = np.ones((8, 1))

    def loss_fn(s, tape):
        h = extractor.extract(ad.constant(e_data), s, 1, 2, tape)
        return ad.matmul(ad.matmul(ad.constant(wl), h), ad.constant(wr))

    errs = ad.grad_check_params(loss_fn, store, eps=1e-6, names=["queries"])
    assert errs["queries"] < 1e-4


def test_mean_pool_rows_identical():
    store = ad.ParamStore()
    extractor.init_mean_pool_params(store, 8, np.random.default_rng(17))
    e = ad.constant(np.random.default_rng(18).normal(size=(12, 8)))
    out = extractor.mean_pool_extract(e, 5, store, None)
    assert out.data.shape == (5, 8)
    for row in out.data[1:]:
        np.testing.assert_array_equal(row, out.data[0])


def test_no_gradient_reaches_token_constants():
    store = _store(2, 8, 1, seed=19)
    e = ad.constant(np.random.default_rng(20).normal(size=(4, 8)))
    tape = ad.Tape()
    out = extractor.extract(e, store, 1, 2, tape)
    assert e.nid is None
    loss = ad.masked_mean(ad.mul(out, out), np.ones(2))
    ad.backward(ad.matmul(loss, ad.constant(np.ones((8, 1)))))
    assert np.any(store.grads["queries"] != 0.0)
