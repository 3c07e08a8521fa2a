"""Cross-attention fusion of the numerical and multimodal branches plus the
statistics-driven gating that blends them per variable.

The fusion value projection starts at zero so an untrained model reproduces
the numerical branch; a residual + layer norm around the fusion attention is
on by default and can be disabled (strict mode) via `fusion_residual=False`.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import layers

GATE_HIDDEN = 16


def init_fusion_params(store, d, d_m, rng, gate_hidden=GATE_HIDDEN):
    layers.init_linear(store, "fusion.wq", d, d, rng)
    layers.init_linear(store, "fusion.wk", d_m, d, rng)
    store.add("fusion.wv", np.zeros((d_m, d)))  # start from the numerical branch
    layers.init_layer_norm(store, "fusion.ln", d)
    layers.init_linear(store, "gate.w1", 4, gate_hidden, rng)
    layers.init_bias(store, "gate.b1", gate_hidden)
    layers.init_linear(store, "gate.w2", gate_hidden, 2, rng)
    layers.init_bias(store, "gate.b2", 2)


def cross_fuse(h_ists, h_mm, store, heads, tape, fusion_residual=True, collect=None):
    """Attend from numerical rows into multimodal rows; output width D."""
    q = ad.matmul(h_ists, store.tensor("fusion.wq", tape))
    k = ad.matmul(h_mm, store.tensor("fusion.wk", tape))
    v = ad.matmul(h_mm, store.tensor("fusion.wv", tape))
    att, probs = layers.attention_heads(q, k, v, heads)
    if collect is not None:
        collect.extend(probs)
    if fusion_residual:
        return layers.layer_norm_p(ad.add(h_ists, att), store, "fusion.ln", tape), probs
    return att, probs


def gate(stats_matrix, store, tape):
    """Map per-variable (mu, sigma, rho, c) rows to convex branch weights."""
    s = ad.constant(np.asarray(stats_matrix, dtype=np.float64))
    h = ad.relu(ad.broadcast_add(ad.matmul(s, store.tensor("gate.w1", tape)),
                                 store.tensor("gate.b1", tape)))
    logits = ad.broadcast_add(ad.matmul(h, store.tensor("gate.w2", tape)),
                              store.tensor("gate.b2", tape))
    return ad.row_softmax(logits)


def combine(h_ists, h_fused, alpha):
    """Row n of the result is alpha_num[n] * h_ists[n] + alpha_mm[n] * h_fused[n]."""
    d = h_ists.shape[1]
    ones_row = ad.constant(np.ones((1, d)))
    a_num = ad.matmul(ad.slice_axis(alpha, 1, 0, 1), ones_row)
    a_mm = ad.matmul(ad.slice_axis(alpha, 1, 1, 2), ones_row)
    return ad.add(ad.mul(a_num, h_ists), ad.mul(a_mm, h_fused))


def init_additive_align_params(store, d, d_m, rng):
    """Replacement used by the additive ablation: project and add, no gating."""
    layers.init_linear(store, "align_proj.w", d_m, d, rng)
    layers.init_bias(store, "align_proj.b", d)


def additive_align(h_ists, h_mm, store, tape):
    proj = ad.broadcast_add(ad.matmul(h_mm, store.tensor("align_proj.w", tape)),
                            store.tensor("align_proj.b", tape))
    return ad.add(h_ists, proj)
