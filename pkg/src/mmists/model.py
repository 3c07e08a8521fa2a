"""Full forecasting model: preparation of model-ready samples, parameter
initialization for the full architecture and its ablation variants, and the
forward pass from canonical matrices to per-query predictions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder, extractor, fusion, imaging, layers
from .data import CanonicalSample, Normalizer, Sample, canonicalize
from .embedding import get_embedding

VARIANTS = ("full", "no_text", "no_image", "no_qbe", "no_align")


@dataclass
class ModelConfig:
    d: int = 64
    d_m: int = 32
    heads: int = 4
    k_layers: int = 3
    l_t: int = 3
    l_v: int = 3
    gate_hidden: int = fusion.GATE_HIDDEN
    fusion_residual: bool = True

    def validate(self):
        if self.d % self.heads or self.d_m % self.heads:
            raise ValueError(f"d={self.d} and d_m={self.d_m} must be divisible by "
                             f"heads={self.heads}")
        for name in ("d", "d_m", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("k_layers", "l_t", "l_v"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def init_model(cfg: ModelConfig, n_vars: int, seed: int, variant: str = "full"):
    """Build the ParamStore for a variant; only parameters it uses exist."""
    cfg.validate()
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rng = np.random.default_rng(seed)
    store = ad.ParamStore()
    encoder.init_encoder_params(store, n_vars, cfg.d, cfg.l_t, cfg.l_v, rng)
    if variant == "no_qbe":
        extractor.init_mean_pool_params(store, cfg.d_m, rng)
    else:
        extractor.init_extractor_params(store, n_vars, cfg.d_m, cfg.k_layers, rng)
    if variant == "no_align":
        fusion.init_additive_align_params(store, cfg.d, cfg.d_m, rng)
    else:
        fusion.init_fusion_params(store, cfg.d, cfg.d_m, rng, cfg.gate_hidden)
    hidden = 2 * cfg.d
    layers.init_linear(store, "pred.w1", cfg.d + 1, hidden, rng)
    layers.init_bias(store, "pred.b1", hidden)
    layers.init_linear(store, "pred.w2", hidden, 1, rng)
    layers.init_bias(store, "pred.b2", 1)
    return store


@dataclass
class PreparedSample:
    """Everything the forward pass needs, with modality inputs precomputed."""

    sample_id: str
    t: np.ndarray            # (N, L) timestamps
    x: np.ndarray            # (N, L) normalized, masked values
    m: np.ndarray            # (N, L) observation mask
    stats_vec: np.ndarray    # (N, 4) raw per-variable [mu, sigma, rho, c]
    e_tokens: np.ndarray     # (S, d_m) frozen embedding matrix
    query_var: np.ndarray    # (Q,) int variable index per query
    query_t: np.ndarray      # (Q,) query timestamps
    target: np.ndarray       # (Q,) normalized targets (NaN when absent)


def prepare_from_canonical(canon: CanonicalSample, sample_id: str, queries,
                           normalizer: Normalizer, provider, templates, tau: float,
                           image_hw, variant: str = "full",
                           image_normalized: bool = False) -> PreparedSample:
    """Build modality inputs and fetch the frozen embedding for one sample."""
    stats = imaging.compute_stats(canon)
    stats_vec = np.array([[s.mu, s.sigma, s.rho, s.c] for s in stats])

    image = imaging.build_image(
        normalizer.apply_canonical(canon) if image_normalized else canon)
    resized = imaging.resize_normalize(image, image_hw[0], image_hw[1])
    if variant == "no_image":
        resized = imaging.ResizedImage(pixels=np.zeros_like(resized.pixels))
    if variant == "no_text":
        prompt = imaging.Prompt.empty()
    else:
        p_img, p_data, p_task = templates
        prompt = imaging.assemble_prompt(stats, tau, p_img, p_data, p_task)
    e_tokens = np.asarray(
        get_embedding(provider, sample_id, resized, prompt), dtype=np.float64)

    norm = normalizer.apply_canonical(canon)
    qv = np.array([q.var_index for q in queries], dtype=np.int64)
    qt = np.array([q.q for q in queries])
    tgt = np.array([np.nan if q.target is None
                    else normalizer.apply(q.target, q.var_index) for q in queries])
    return PreparedSample(sample_id, norm.T, norm.X, norm.M, stats_vec,
                          e_tokens, qv, qt, tgt)


def prepare_sample(sample: Sample, length: int, normalizer: Normalizer, provider,
                   templates, tau: float, image_hw, variant: str = "full",
                   include_empty_variable_queries: bool = True,
                   image_normalized: bool = False) -> PreparedSample:
    """Canonicalize a sample and prepare it for the forward pass."""
    canon = canonicalize(sample, length)
    queries = list(sample.queries)
    if not include_empty_variable_queries:
        observed = {s.var_index for s in sample.series if s.observations}
        queries = [q for q in queries if q.var_index in observed]
    return prepare_from_canonical(canon, sample.id, queries, normalizer, provider,
                                  templates, tau, image_hw, variant,
                                  image_normalized)


@dataclass
class ForwardResult:
    predictions: ad.Tensor          # (Q, 1)
    h_ists: ad.Tensor
    h_mm: ad.Tensor
    h_final: ad.Tensor
    e_const: ad.Tensor
    alpha: ad.Tensor | None = None  # (N, 2) gating weights, None for no_align
    h_fused: ad.Tensor | None = None
    fusion_probs: list = field(default_factory=list)
    all_probs: list = field(default_factory=list)


def predict_queries(h_final, query_var, query_t, store, tape):
    """MLP over [h_final[var] || q] for each query; returns (Q, 1)."""
    rows = ad.gather_rows(h_final, query_var)
    q_col = ad.constant(np.asarray(query_t, dtype=np.float64).reshape(-1, 1))
    pin = ad.concat([rows, q_col], axis=1)
    h = ad.relu(ad.broadcast_add(ad.matmul(pin, store.tensor("pred.w1", tape)),
                                 store.tensor("pred.b1", tape)))
    return ad.broadcast_add(ad.matmul(h, store.tensor("pred.w2", tape)),
                            store.tensor("pred.b2", tape))


def forward(store, prepared: PreparedSample, cfg: ModelConfig, tape=None,
            variant: str = "full", collect_probs: bool = False) -> ForwardResult:
    collect = [] if collect_probs else None
    h_ists = encoder.encode_sample(prepared.t, prepared.x, prepared.m, store,
                                   cfg.l_t, cfg.l_v, cfg.heads, tape, collect)
    e_const = ad.constant(prepared.e_tokens)
    n_vars = prepared.t.shape[0]
    if variant == "no_qbe":
        h_mm = extractor.mean_pool_extract(e_const, n_vars, store, tape)
    else:
        h_mm = extractor.extract(e_const, store, cfg.k_layers, cfg.heads, tape, collect)

    alpha = None
    h_fused = None
    fusion_probs = []
    if variant == "no_align":
        h_final = fusion.additive_align(h_ists, h_mm, store, tape)
    else:
        h_fused, fusion_probs = fusion.cross_fuse(
            h_ists, h_mm, store, cfg.heads, tape,
            fusion_residual=cfg.fusion_residual, collect=collect)
        alpha = fusion.gate(prepared.stats_vec, store, tape)
        h_final = fusion.combine(h_ists, h_fused, alpha)

    preds = predict_queries(h_final, prepared.query_var, prepared.query_t, store, tape)
    return ForwardResult(predictions=preds, h_ists=h_ists, h_mm=h_mm,
                         h_final=h_final, e_const=e_const, alpha=alpha,
                         h_fused=h_fused, fusion_probs=fusion_probs,
                         all_probs=collect or [])


def alignment_diagnostics(store, prepared: PreparedSample, cfg: ModelConfig):
    """Head-averaged fusion attention plus (rho, alpha_mm) per variable."""
    res = forward(store, prepared, cfg, tape=None, variant="full")
    att = np.mean([p.data for p in res.fusion_probs], axis=0)
    return {
        "sample_id": prepared.sample_id,
        "vars": [{"var": n,
                  "rho": float(prepared.stats_vec[n, 2]),
                  "alpha_mm": float(res.alpha.data[n, 1])}
                 for n in range(prepared.t.shape[0])],
        "attention": [[float(v) for v in row] for row in att],
    }
