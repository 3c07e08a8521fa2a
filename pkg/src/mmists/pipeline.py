"""End-to-end orchestration shared by the command-line entry points and the
acceptance suite: dataset generation, modality exports, embedding cache fill,
training runs, evaluation, ablation, gradient checking, diagnostics dumps."""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import data, embedding, imaging, model, training
from .config import ConfigInvalid, MissingInput, RunConfig

GRADCHECK_THRESHOLD = 1e-3


def build_provider(cfg: RunConfig, cache_dir=None):
    if cfg.provider_kind == "synthetic":
        return embedding.SyntheticProvider(cfg.provider_s_tokens, cfg.provider_d_m,
                                           cfg.seed_for("provider"))
    cache = cache_dir or cfg.provider_cache_dir or os.environ.get("MM_ISTS_CACHE")
    if not cache:
        raise ConfigInvalid("file provider needs a cache dir "
                            "(--cache-dir, config, or MM_ISTS_CACHE)")
    if not os.path.isdir(cache):
        raise MissingInput(f"cache dir not found: {cache}")
    return embedding.FileCacheProvider(cache)


def load_samples(path):
    if not path:
        raise MissingInput("no dataset file given (--data)")
    if not os.path.exists(path):
        raise MissingInput(f"dataset file not found: {path}")
    samples = data.load_dataset(path)
    if not samples:
        raise MissingInput(f"dataset file is empty: {path}")
    return samples


def padded_length(cfg: RunConfig, samples):
    return cfg.data_l_cap if cfg.data_l_cap > 0 else data.max_length(samples)


@dataclass
class DataBundle:
    prepared: dict          # split name -> list[PreparedSample]
    raw: dict               # split name -> list[Sample]
    normalizer: data.Normalizer
    length: int
    n_vars: int
    mcfg: model.ModelConfig
    provider: object
    templates: tuple


def build_bundle(cfg: RunConfig, samples, variant="full", cache_dir=None,
                 splits=True) -> DataBundle:
    """Split, normalize, and prepare a dataset for one model variant."""
    cfg.validate()
    length = padded_length(cfg, samples)
    if cfg.data_l_cap > 0:
        samples = [data.truncate_to_cap(s, cfg.data_l_cap) for s in samples]
    if splits:
        train_s, val_s, test_s = data.split_dataset(samples, cfg.seed_for("split"))
        raw = {"train": train_s, "val": val_s, "test": test_s}
    else:
        raw = {"all": samples}
    normalizer = data.fit_normalizer(raw.get("train", samples))
    provider = build_provider(cfg, cache_dir)
    if provider.kind == "file":
        first = embedding.read_record(provider.cache_dir, samples[0].id)
        d_m = first.data.shape[1]
    else:
        d_m = cfg.provider_d_m
    templates = imaging.load_templates(cfg.prompt_template_dir or None,
                                       cfg.prompt_dataset_name)
    image_hw = (cfg.image_height, cfg.image_width)
    prepared = {
        name: [model.prepare_sample(
            s, length, normalizer, provider, templates, cfg.prompt_tau, image_hw,
            variant, cfg.train_include_empty_variable_queries,
            cfg.image_normalized) for s in part]
        for name, part in raw.items()}
    mcfg = model.ModelConfig(d=cfg.model_d, d_m=d_m, heads=cfg.model_heads,
                             k_layers=cfg.model_k_layers, l_t=cfg.model_l_t,
                             l_v=cfg.model_l_v, gate_hidden=cfg.model_gate_hidden,
                             fusion_residual=cfg.model_fusion_residual)
    n_vars = samples[0].n_vars
    return DataBundle(prepared=prepared, raw=raw, normalizer=normalizer,
                      length=length, n_vars=n_vars, mcfg=mcfg,
                      provider=provider, templates=templates)


# ---------------------------------------------------------------------------
# subcommand bodies


def run_gen(cfg: RunConfig, out_path):
    if not out_path:
        raise MissingInput("gen needs an output path (--out)")
    gen_cfg = data.SyntheticConfig(
        n_vars=cfg.data_n_vars, l_max=cfg.data_l_max, samples=cfg.data_samples,
        obs_rate=cfg.data_obs_rate, noise=cfg.data_noise, horizon=cfg.data_horizon)
    samples = data.generate_synthetic(gen_cfg, cfg.seed_for("gen"))
    data.save_dataset(out_path, samples)
    return {"samples": len(samples), "path": str(out_path)}


def _sample_modalities(cfg, samples):
    """Per-sample (canonical, image, resized, prompt) under the run config.

    With image_normalized set, the value channel uses the same train-split
    normalizer the training pipeline would fit, keeping exports and the
    in-process provider inputs identical.
    """
    length = padded_length(cfg, samples)
    templates = imaging.load_templates(cfg.prompt_template_dir or None,
                                       cfg.prompt_dataset_name)
    normalizer = None
    if cfg.image_normalized:
        train_s, _, _ = data.split_dataset(samples, cfg.seed_for("split"))
        normalizer = data.fit_normalizer(train_s)
    for sample in samples:
        canon = data.canonicalize(sample, length)
        stats = imaging.compute_stats(canon)
        img_canon = normalizer.apply_canonical(canon) if normalizer else canon
        image = imaging.build_image(img_canon)
        resized = imaging.resize_normalize(image, cfg.image_height, cfg.image_width)
        prompt = imaging.assemble_prompt(stats, cfg.prompt_tau, *templates)
        yield sample, image, resized, prompt


def run_images(cfg: RunConfig, data_path, out_dir):
    samples = load_samples(data_path)
    os.makedirs(out_dir, exist_ok=True)
    count = 0
    for sample, image, _, _ in _sample_modalities(cfg, samples):
        imaging.write_mmi1(os.path.join(
            out_dir, embedding.sanitize_id(sample.id) + ".mmi"), image.stacked)
        count += 1
    return {"images": count, "dir": str(out_dir)}


def run_prompts(cfg: RunConfig, data_path, out_dir):
    samples = load_samples(data_path)
    os.makedirs(out_dir, exist_ok=True)
    count = 0
    for sample, _, _, prompt in _sample_modalities(cfg, samples):
        path = os.path.join(out_dir, embedding.sanitize_id(sample.id) + ".txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(prompt.rendered)
        count += 1
    return {"prompts": count, "dir": str(out_dir)}


def run_embed(cfg: RunConfig, data_path, cache_dir):
    """Fill an embedding cache with the synthetic provider's output."""
    cache = cache_dir or cfg.provider_cache_dir or os.environ.get("MM_ISTS_CACHE")
    if not cache:
        raise MissingInput("embed needs a cache dir (--cache-dir or MM_ISTS_CACHE)")
    samples = load_samples(data_path)
    os.makedirs(cache, exist_ok=True)
    seed = cfg.seed_for("provider")
    count = 0
    for sample, _, resized, prompt in _sample_modalities(cfg, samples):
        mat = embedding.synth_embed(resized, prompt, cfg.provider_s_tokens,
                                    cfg.provider_d_m, seed)
        embedding.write_record(cache, embedding.CacheRecord(
            sample.id, embedding.DEFAULT_LAYER_OFFSET, mat))
        count += 1
    return {"embeddings": count, "dir": str(cache)}


def _checkpoint_meta(cfg, bundle, variant, result):
    return {
        "model": asdict(bundle.mcfg),
        "n_vars": bundle.n_vars,
        "length": bundle.length,
        "variant": variant,
        "normalizer": bundle.normalizer.to_dict(),
        "run_seed": cfg.run_seed,
        "tau": cfg.prompt_tau,
        "image_hw": [cfg.image_height, cfg.image_width],
        "image_normalized": cfg.image_normalized,
        "dataset_name": cfg.prompt_dataset_name,
        "template_dir": cfg.prompt_template_dir,
        "provider": {"kind": cfg.provider_kind, "s_tokens": cfg.provider_s_tokens,
                     "d_m": cfg.provider_d_m, "cache_dir": cfg.provider_cache_dir},
        "include_empty_variable_queries": cfg.train_include_empty_variable_queries,
        "data_l_cap": cfg.data_l_cap,
        "best_val_mse": result.best_val_mse,
        "best_epoch": result.best_epoch,
    }


def _fold_cache_dir(cfg, cache_dir):
    """Record the resolved cache location on the config so checkpoints carry it."""
    if cfg.provider_kind == "file":
        resolved = cache_dir or cfg.provider_cache_dir or os.environ.get("MM_ISTS_CACHE")
        if resolved:
            cfg.provider_cache_dir = os.path.abspath(resolved)


def run_train(cfg: RunConfig, data_path, out_dir, variant="full", cache_dir=None):
    if variant not in model.VARIANTS:
        raise ConfigInvalid(f"unknown variant {variant!r}")
    _fold_cache_dir(cfg, cache_dir)
    samples = load_samples(data_path)
    bundle = build_bundle(cfg, samples, variant, cache_dir)
    store = model.init_model(bundle.mcfg, bundle.n_vars, cfg.seed_for("model"), variant)
    tcfg = training.TrainConfig(lr=cfg.train_lr, batch_size=cfg.train_batch_size,
                                epochs=cfg.train_epochs, patience=cfg.train_patience,
                                seed=cfg.seed_for("train"))
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "epochs.jsonl")
    with open(log_path, "w", encoding="utf-8") as log_fh:
        result = training.train(store, bundle.prepared["train"],
                                bundle.prepared["val"], bundle.mcfg, tcfg,
                                variant, log_fh)
    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")
    ad.save_checkpoint(ckpt_path, store, _checkpoint_meta(cfg, bundle, variant, result))
    test_metrics = training.evaluate_prepared(store, bundle.prepared["test"],
                                              bundle.mcfg, variant)
    summary = {"best_val_mse": result.best_val_mse, "best_epoch": result.best_epoch,
               "epochs_run": len(result.history), "test": test_metrics.as_dict(),
               "checkpoint": ckpt_path, "epoch_log": log_path}
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def _restore(checkpoint_path, cache_dir=None):
    """Rebuild (store, meta, cfg, variant) from a checkpoint's metadata."""
    if not checkpoint_path or not os.path.exists(checkpoint_path):
        raise MissingInput(f"checkpoint not found: {checkpoint_path}")
    store, meta = ad.load_checkpoint(checkpoint_path)
    cfg = RunConfig()
    cfg.run_seed = meta["run_seed"]
    cfg.prompt_tau = meta["tau"]
    cfg.image_height, cfg.image_width = meta["image_hw"]
    cfg.image_normalized = meta.get("image_normalized", False)
    cfg.prompt_dataset_name = meta["dataset_name"]
    cfg.prompt_template_dir = meta.get("template_dir", "")
    prov = meta["provider"]
    cfg.provider_kind = prov["kind"]
    cfg.provider_s_tokens = prov["s_tokens"]
    cfg.provider_d_m = prov["d_m"]
    cfg.provider_cache_dir = cache_dir or prov.get("cache_dir", "")
    cfg.train_include_empty_variable_queries = meta["include_empty_variable_queries"]
    cfg.data_l_cap = meta.get("data_l_cap", 0)
    m = meta["model"]
    cfg.model_d = m["d"]
    cfg.model_heads = m["heads"]
    cfg.model_k_layers = m["k_layers"]
    cfg.model_l_t = m["l_t"]
    cfg.model_l_v = m["l_v"]
    cfg.model_gate_hidden = m["gate_hidden"]
    cfg.model_fusion_residual = m["fusion_residual"]
    return store, meta, cfg


def run_eval(data_path, checkpoint_path, split="test", cache_dir=None, invert=False):
    store, meta, cfg = _restore(checkpoint_path, cache_dir)
    samples = load_samples(data_path)
    variant = meta["variant"]
    bundle = build_bundle(cfg, samples, variant, cache_dir,
                          splits=(split != "all"))
    prepared = bundle.prepared["all" if split == "all" else split]
    metrics = training.evaluate_prepared(store, prepared, bundle.mcfg, variant)
    out = {"split": split, "variant": variant, **metrics.as_dict()}
    if invert:
        preds, targets = training.gather_predictions(store, prepared, bundle.mcfg,
                                                     variant)
        raw_err = []
        pos = 0
        for prep in prepared:
            keep = ~np.isnan(prep.target)
            for v, _t in zip(prep.query_var[keep], prep.target[keep]):
                p = bundle.normalizer.invert(preds[pos], v)
                t = bundle.normalizer.invert(targets[pos], v)
                raw_err.append(p - t)
                pos += 1
        raw_err = np.asarray(raw_err)
        out["raw_mse"] = float(np.mean(raw_err ** 2))
        out["raw_mae"] = float(np.mean(np.abs(raw_err)))
    return out


def run_ablate(cfg: RunConfig, data_path, out_dir, cache_dir=None):
    """Train the full model and all four ablation variants; tabulate test MSE."""
    _fold_cache_dir(cfg, cache_dir)
    samples = load_samples(data_path)
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for variant in model.VARIANTS:
        bundle = build_bundle(cfg, samples, variant, cache_dir)
        store = model.init_model(bundle.mcfg, bundle.n_vars,
                                 cfg.seed_for("model"), variant)
        tcfg = training.TrainConfig(lr=cfg.train_lr, batch_size=cfg.train_batch_size,
                                    epochs=cfg.train_epochs,
                                    patience=cfg.train_patience,
                                    seed=cfg.seed_for("train"))
        training.train(store, bundle.prepared["train"], bundle.prepared["val"],
                       bundle.mcfg, tcfg, variant)
        metrics = training.evaluate_prepared(store, bundle.prepared["test"],
                                             bundle.mcfg, variant)
        rows.append({"variant": variant, "mse": metrics.mse, "mae": metrics.mae,
                     "scaled_mse": metrics.scaled_mse,
                     "scaled_mae": metrics.scaled_mae})
    table_path = os.path.join(out_dir, "results.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, ["variant", "mse", "mae",
                                     "scaled_mse", "scaled_mae"])
        writer.writeheader()
        writer.writerows(rows)
    return {"table": table_path, "rows": rows}


TINY_INSTANCE = {"n_vars": 3, "l_max": 6, "d": 8, "d_m": 12, "s_tokens": 10,
                 "k_layers": 2, "l_t": 1, "l_v": 1, "heads": 2}


def run_gradcheck(seed=0, threshold=GRADCHECK_THRESHOLD, eps=1e-6):
    """Full-model gradient check on the pinned tiny instance."""
    t0 = time.perf_counter()
    ti = TINY_INSTANCE
    gen_cfg = data.SyntheticConfig(n_vars=ti["n_vars"], l_max=ti["l_max"], samples=1,
                                   obs_rate=0.7, noise=0.1, horizon=2)
    sample = data.generate_synthetic(gen_cfg, seed=seed)[0]
    normalizer = data.fit_normalizer([sample])
    provider = embedding.SyntheticProvider(ti["s_tokens"], ti["d_m"], seed)
    templates = imaging.load_templates(dataset_name="gradcheck")
    prep = model.prepare_sample(sample, ti["l_max"], normalizer, provider,
                                templates, imaging.DEFAULT_TAU, (8, 8))
    mcfg = model.ModelConfig(d=ti["d"], d_m=ti["d_m"], heads=ti["heads"],
                             k_layers=ti["k_layers"], l_t=ti["l_t"], l_v=ti["l_v"])
    store = model.init_model(mcfg, ti["n_vars"], seed=seed)

    def loss_fn(s, tape):
        res = model.forward(s, prep, mcfg, tape)
        return training.mse_loss(res.predictions, prep.target)

    errors = ad.grad_check_params(loss_fn, store, eps=eps)
    max_error = max(errors.values())
    return {"errors": errors, "max_error": max_error, "threshold": threshold,
            "passed": max_error < threshold,
            "seconds": time.perf_counter() - t0}


def run_dump_align(data_path, checkpoint_path, out_path, split="test",
                   cache_dir=None):
    store, meta, cfg = _restore(checkpoint_path, cache_dir)
    if meta["variant"] != "full":
        raise ConfigInvalid("alignment diagnostics need a full-variant checkpoint")
    samples = load_samples(data_path)
    bundle = build_bundle(cfg, samples, "full", cache_dir, splits=(split != "all"))
    prepared = bundle.prepared["all" if split == "all" else split]
    with open(out_path, "w", encoding="utf-8") as fh:
        for prep in prepared:
            rec = model.alignment_diagnostics(store, prep, bundle.mcfg)
            fh.write(json.dumps(rec) + "\n")
    return {"records": len(prepared), "path": str(out_path)}
