import numpy as np

from mmists import imaging, pipeline
from mmists.config import RunConfig


def _cfg(**overrides):
    cfg = RunConfig()
    cfg.data_n_vars = 2
    cfg.data_l_max = 8
    cfg.data_samples = 10
    cfg.model_d = 8
    cfg.model_heads = 2
    cfg.model_k_layers = 1
    cfg.model_l_t = 1
    cfg.model_l_v = 1
    cfg.provider_s_tokens = 6
    cfg.provider_d_m = 8
    cfg.image_height = 8
    cfg.image_width = 8
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def test_image_normalized_knob_changes_embeddings(tmp_path):
    ds = tmp_path / "ds.jsonl"
    pipeline.run_gen(_cfg(), ds)
    samples = pipeline.load_samples(ds)
    raw = pipeline.build_bundle(_cfg(), samples)
    norm = pipeline.build_bundle(_cfg(image_normalized=True), samples)
    assert not np.array_equal(raw.prepared["train"][0].e_tokens,
                              norm.prepared["train"][0].e_tokens)


def test_image_normalized_exports_match_training_inputs(tmp_path):
    cfg = _cfg(image_normalized=True)
    ds = tmp_path / "ds.jsonl"
    pipeline.run_gen(cfg, ds)
    out = tmp_path / "imgs"
    pipeline.run_images(cfg, ds, out)
    samples = pipeline.load_samples(ds)
    exported = {p.stem: imaging.read_mmi1(p) for p in out.glob("*.mmi")}
    assert len(exported) == 10
    # exported value channels are normalized: masked cells stay zero
    for tensor in exported.values():
        assert np.all(tensor[0][tensor[1] == 0.0] == 0.0)
