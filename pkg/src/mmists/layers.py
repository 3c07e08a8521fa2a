"""Transformer building blocks expressed through the tape ops.

Attention projections carry no biases (plain weight matrices); feed-forward
sublayers use biased affine maps with ReLU and a 4x hidden width. Layers are
pre-norm: x + Sublayer(LN(x)).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

FFN_MULT = 4


def init_linear(store, name, fan_in, fan_out, rng):
    lim = 1.0 / np.sqrt(fan_in)
    store.add(name, rng.uniform(-lim, lim, size=(fan_in, fan_out)))


def init_bias(store, name, dim):
    store.add(name, np.zeros(dim))


def init_layer_norm(store, prefix, dim):
    store.add(prefix + ".g", np.ones(dim))
    store.add(prefix + ".b", np.zeros(dim))


def init_ffn(store, prefix, dim, rng):
    hidden = FFN_MULT * dim
    init_linear(store, prefix + ".w1", dim, hidden, rng)
    init_bias(store, prefix + ".b1", hidden)
    init_linear(store, prefix + ".w2", hidden, dim, rng)
    init_bias(store, prefix + ".b2", dim)


def init_self_attention(store, prefix, dim, rng):
    for w in ("wq", "wk", "wv", "wo"):
        init_linear(store, f"{prefix}.{w}", dim, dim, rng)


def init_transformer_layer(store, prefix, dim, rng):
    init_layer_norm(store, prefix + ".ln1", dim)
    init_self_attention(store, prefix + ".attn", dim, rng)
    init_layer_norm(store, prefix + ".ln2", dim)
    init_ffn(store, prefix + ".ffn", dim, rng)


def layer_norm_p(x, store, prefix, tape):
    return ad.layer_norm(x, store.tensor(prefix + ".g", tape),
                         store.tensor(prefix + ".b", tape))


def attention_heads(q_full, k_full, v_full, heads, key_mask=None):
    """Scaled dot-product attention split over heads; concatenated output.

    q_full/k_full share a width; v_full may differ. Returns the (R, dv)
    output and the per-head probability tensors (each row-stochastic).
    """
    dq = q_full.shape[1]
    dv = v_full.shape[1]
    if dq % heads or dv % heads:
        raise ad.ShapeMismatch(f"widths {dq}/{dv} not divisible by {heads} heads")
    hq, hv = dq // heads, dv // heads
    scale = 1.0 / np.sqrt(hq)
    outs, probs = [], []
    for i in range(heads):
        qi = ad.slice_axis(q_full, 1, i * hq, (i + 1) * hq)
        ki = ad.slice_axis(k_full, 1, i * hq, (i + 1) * hq)
        vi = ad.slice_axis(v_full, 1, i * hv, (i + 1) * hv)
        logits = ad.scalar_mul(ad.matmul(qi, ad.transpose(ki)), scale)
        p = ad.row_softmax(logits, key_mask)
        probs.append(p)
        outs.append(ad.matmul(p, vi))
    return ad.concat(outs, axis=1), probs


def self_attention(x, store, prefix, heads, tape, key_mask=None):
    q = ad.matmul(x, store.tensor(prefix + ".wq", tape))
    k = ad.matmul(x, store.tensor(prefix + ".wk", tape))
    v = ad.matmul(x, store.tensor(prefix + ".wv", tape))
    out, probs = attention_heads(q, k, v, heads, key_mask)
    return ad.matmul(out, store.tensor(prefix + ".wo", tape)), probs


def ffn(x, store, prefix, tape):
    h = ad.broadcast_add(ad.matmul(x, store.tensor(prefix + ".w1", tape)),
                         store.tensor(prefix + ".b1", tape))
    h = ad.relu(h)
    return ad.broadcast_add(ad.matmul(h, store.tensor(prefix + ".w2", tape)),
                            store.tensor(prefix + ".b2", tape))


def transformer_layer(x, store, prefix, heads, tape, key_mask=None):
    """Pre-norm block: x += SelfAttn(LN(x)); x += FFN(LN(x))."""
    attn, probs = self_attention(layer_norm_p(x, store, prefix + ".ln1", tape),
                                 store, prefix + ".attn", heads, tape, key_mask)
    x = ad.add(x, attn)
    x = ad.add(x, ffn(layer_norm_p(x, store, prefix + ".ln2", tape),
                      store, prefix + ".ffn", tape))
    return x, probs
