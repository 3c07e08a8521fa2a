import numpy as np

from mmists import data, embedding, imaging, model


def build_setup(n_vars=3, l_max=6, n_samples=8, seed=0, d=8, d_m=12, heads=2,
                k_layers=2, l_t=1, l_v=1, s_tokens=10, image_hw=(8, 8),
                variant="full", obs_rate=0.7, horizon=2):
    """Small end-to-end fixture: synthetic data, provider, prepared samples."""
    cfg = data.SyntheticConfig(n_vars=n_vars, l_max=l_max, samples=n_samples,
                               obs_rate=obs_rate, noise=0.1, horizon=horizon)
    samples = data.generate_synthetic(cfg, seed=seed)
    normalizer = data.fit_normalizer(samples)
    provider = embedding.SyntheticProvider(s_tokens=s_tokens, d_m=d_m, seed=seed)
    templates = imaging.load_templates(dataset_name="synthetic")
    prepared = [model.prepare_sample(s, l_max, normalizer, provider, templates,
                                     imaging.DEFAULT_TAU, image_hw, variant)
                for s in samples]
    mcfg = model.ModelConfig(d=d, d_m=d_m, heads=heads, k_layers=k_layers,
                             l_t=l_t, l_v=l_v)
    store = model.init_model(mcfg, n_vars, seed=seed, variant=variant)
    return {"samples": samples, "normalizer": normalizer, "provider": provider,
            "templates": templates, "prepared": prepared, "mcfg": mcfg,
            "store": store, "l_max": l_max}
