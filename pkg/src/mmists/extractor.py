"""Query-based feature extractor: N learnable query tokens compress a
variable-length (S, d_m) token matrix into N variable-aligned rows through
stacked self-attention, cross-attention and feed-forward refinement."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import layers
from .embedding import DimensionMismatch

QUERY_INIT_STD = 0.02


def init_extractor_params(store, n_vars, d_m, k_layers, rng):
    store.add("queries", rng.normal(0.0, QUERY_INIT_STD, size=(n_vars, d_m)))
    for i in range(k_layers):
        p = f"extractor.{i}"
        layers.init_layer_norm(store, p + ".ln_self", d_m)
        layers.init_self_attention(store, p + ".self", d_m, rng)
        layers.init_layer_norm(store, p + ".ln_cross", d_m)
        for w in ("wq", "wk", "wv"):
            layers.init_linear(store, f"{p}.cross.{w}", d_m, d_m, rng)
        layers.init_layer_norm(store, p + ".ln_ffn", d_m)
        layers.init_ffn(store, p + ".ffn", d_m, rng)


def extractor_layer(q_in, e_tokens, store, prefix, heads, tape, collect=None):
    """One refinement step.

    q_tilde = q_in + SelfAttn(LN(q_in))
    q_hat   = q_tilde + CrossAttn(LN(q_tilde), E, E)   (heads concatenated)
    out     = q_hat + FFN(LN(q_hat))
    """
    if e_tokens.shape[1] != q_in.shape[1]:
        raise DimensionMismatch(
            f"token width {e_tokens.shape[1]} != query width {q_in.shape[1]}")
    sa, sa_probs = layers.self_attention(
        layers.layer_norm_p(q_in, store, prefix + ".ln_self", tape),
        store, prefix + ".self", heads, tape)
    q_tilde = ad.add(q_in, sa)

    q_prime = layers.layer_norm_p(q_tilde, store, prefix + ".ln_cross", tape)
    qp = ad.matmul(q_prime, store.tensor(prefix + ".cross.wq", tape))
    kp = ad.matmul(e_tokens, store.tensor(prefix + ".cross.wk", tape))
    vp = ad.matmul(e_tokens, store.tensor(prefix + ".cross.wv", tape))
    ca, ca_probs = layers.attention_heads(qp, kp, vp, heads)
    q_hat = ad.add(q_tilde, ca)

    out = ad.add(q_hat, layers.ffn(
        layers.layer_norm_p(q_hat, store, prefix + ".ln_ffn", tape),
        store, prefix + ".ffn", tape))
    if collect is not None:
        collect.extend(sa_probs)
        collect.extend(ca_probs)
    return out


def extract(e_tokens, store, k_layers, heads, tape, collect=None):
    """Run K refinement layers from the learnable queries; K=0 returns them."""
    q = store.tensor("queries", tape)
    for i in range(k_layers):
        q = extractor_layer(q, e_tokens, store, f"extractor.{i}", heads, tape, collect)
    return q


def init_mean_pool_params(store, d_m, rng):
    """Replacement head used by the pooled ablation: one d_m -> d_m affine."""
    layers.init_linear(store, "qbe_pool.w", d_m, d_m, rng)
    layers.init_bias(store, "qbe_pool.b", d_m)


def mean_pool_extract(e_tokens, n_vars, store, tape):
    """Average pool all tokens, affine-map, broadcast to every variable row."""
    s = e_tokens.shape[0]
    pooled = ad.masked_mean(e_tokens, np.ones(s))
    row = ad.broadcast_add(ad.matmul(pooled, store.tensor("qbe_pool.w", tape)),
                           store.tensor("qbe_pool.b", tape))
    return ad.matmul(ad.constant(np.ones((n_vars, 1))), row)
