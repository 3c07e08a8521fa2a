"""Numerical branch: timestamp/variable/value embeddings, the per-variable
temporal encoder with mask-aware attention and aggregation, and the
cross-variable encoder producing one feature row per variable.

Padded positions never act as attention keys and never enter the aggregation
mean, so values injected at masked cells cannot reach the output.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import layers

VAR_EMBED_STD = 0.02


def init_encoder_params(store, n_vars, d, l_t, l_v, rng):
    if d % 1:
        raise ValueError("d must be an integer")
    # frequency ladder: component d gets 10^(-4d/D), component 0 stays linear
    store.add("time.omega", np.power(10.0, -4.0 * np.arange(d) / d)[None, :])
    store.add("time.beta", np.zeros(d))
    store.add("var_embed", rng.normal(0.0, VAR_EMBED_STD, size=(n_vars, d)))
    layers.init_linear(store, "value.w", 2, d, rng)
    layers.init_bias(store, "value.b", d)
    for i in range(l_t):
        layers.init_transformer_layer(store, f"temporal.{i}", d, rng)
    for i in range(l_v):
        layers.init_transformer_layer(store, f"variable.{i}", d, rng)


def phi(timestamps, store, tape):
    """Map (L,) timestamps to (L, D): linear first component, sinusoids after."""
    t_col = ad.constant(np.asarray(timestamps, dtype=np.float64).reshape(-1, 1))
    omega = store.tensor("time.omega", tape)
    pre = ad.broadcast_add(ad.matmul(t_col, omega), store.tensor("time.beta", tape))
    d = omega.shape[1]
    lin = ad.slice_axis(pre, 1, 0, 1)
    if d == 1:
        return lin
    return ad.concat([lin, ad.sin(ad.slice_axis(pre, 1, 1, d))], axis=1)


def fuse_embeddings(t_row, x_row, m_row, var_index, store, tape):
    """Build the (L+1, D) token sequence for one variable.

    Row 0 is the variable's learnable token; row l is
    m_l * phi(t_l) + [x_l * m_l, m_l] @ W_val + b_val, so a masked position
    reduces to the value-projection bias regardless of its t and x cells.
    """
    d = store.params["var_embed"].shape[1]
    ph = phi(t_row, store, tape)
    gate = ad.constant(np.repeat(np.asarray(m_row, dtype=np.float64)[:, None], d, axis=1))
    gated_time = ad.mul(gate, ph)
    vin = ad.constant(np.stack([np.asarray(x_row) * np.asarray(m_row),
                                np.asarray(m_row)], axis=1))
    val = ad.broadcast_add(ad.matmul(vin, store.tensor("value.w", tape)),
                           store.tensor("value.b", tape))
    z = ad.add(gated_time, val)
    e_var = ad.slice_axis(store.tensor("var_embed", tape), 0, var_index, var_index + 1)
    return ad.concat([e_var, z], axis=0)


def extended_mask(m_row):
    """Prepend the always-valid variable-token slot to an observation mask."""
    return np.concatenate([[1.0], np.asarray(m_row, dtype=np.float64)])


def temporal_encode(z, m_ext, store, l_t, heads, tape, collect=None):
    if not np.any(m_ext > 0.0):
        raise ad.AllMasked("temporal encoder needs at least one valid key")
    h = z
    for i in range(l_t):
        h, probs = layers.transformer_layer(h, store, f"temporal.{i}", heads, tape,
                                            key_mask=m_ext)
        if collect is not None:
            collect.extend(probs)
    return h


def aggregate(h_temp, m_ext):
    """Mask-aware mean over sequence positions -> (1, D)."""
    return ad.masked_mean(h_temp, m_ext)


def variable_encode(h_rows, store, l_v, heads, tape, collect=None):
    """Stack per-variable vectors, add variable embeddings, attend across vars."""
    h = ad.concat(list(h_rows), axis=0)
    h = ad.add(h, store.tensor("var_embed", tape))
    for i in range(l_v):
        h, probs = layers.transformer_layer(h, store, f"variable.{i}", heads, tape)
        if collect is not None:
            collect.extend(probs)
    return h


def encode_sample(t_mat, x_mat, m_mat, store, l_t, l_v, heads, tape, collect=None):
    """Full numerical branch for one sample: (N, L) matrices -> (N, D)."""
    rows = []
    for n in range(t_mat.shape[0]):
        z = fuse_embeddings(t_mat[n], x_mat[n], m_mat[n], n, store, tape)
        m_ext = extended_mask(m_mat[n])
        h = temporal_encode(z, m_ext, store, l_t, heads, tape, collect)
        rows.append(aggregate(h, m_ext))
    return variable_encode(rows, store, l_v, heads, tape, collect)
