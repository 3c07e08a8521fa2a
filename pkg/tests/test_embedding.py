import numpy as np
import pytest

from mmists import embedding, imaging


def _image(seed=0, shape=(3, 4, 6)):
    rng = np.random.default_rng(seed)
    return imaging.ResizedImage(pixels=rng.uniform(size=shape))


def _prompt(text="hello world", stats=None):
    return imaging.Prompt(parts=(text,), rendered=text, stats=stats)


def _stats(mus):
    return tuple(imaging.VariableStats(m, 0.5, m - 1, m + 1, 0.25, 0.75, 3, True)
                 for m in mus)


def test_cache_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    mat = rng.normal(size=(17, 32)).astype(np.float32)
    rec = embedding.CacheRecord("sample-17", 3, mat)
    embedding.write_record(tmp_path, rec)
    back = embedding.read_record(tmp_path, "sample-17")
    assert back.layer_offset == 3
    assert back.data.shape == (17, 32)
    assert back.data.tobytes() == mat.tobytes()


def test_cache_round_trip_subnormals(tmp_path):
    rng = np.random.default_rng(2)
    for i in range(100):
        mat = rng.normal(size=(3, 5)).astype(np.float32)
        mat[0, 0] = np.float32(1e-41)          # subnormal
        mat[1, 2] = np.float32(-4e-45)         # smallest-magnitude subnormals
        sid = f"id{i}"
        embedding.write_record(tmp_path, embedding.CacheRecord(sid, 1, mat))
        back = embedding.read_record(tmp_path, sid)
        assert back.data.tobytes() == mat.tobytes()


def test_read_unknown_id(tmp_path):
    with pytest.raises(embedding.NotFound):
        embedding.read_record(tmp_path, "nope")


def test_truncated_file_detected(tmp_path):
    mat = np.ones((4, 4), dtype=np.float32)
    path = embedding.write_record(tmp_path, embedding.CacheRecord("t", 2, mat))
    blob = path.read_bytes()
    path.write_bytes(blob[:-9])
    with pytest.raises(embedding.CorruptRecord):
        embedding.read_record(tmp_path, "t")


def test_corrupt_payload_detected_by_crc(tmp_path):
    mat = np.ones((4, 4), dtype=np.float32)
    path = embedding.write_record(tmp_path, embedding.CacheRecord("c", 2, mat))
    blob = bytearray(path.read_bytes())
    blob[30] ^= 0x40  # flip a payload bit
    path.write_bytes(bytes(blob))
    with pytest.raises(embedding.CorruptRecord):
        embedding.read_record(tmp_path, "c")


def test_bad_magic_detected(tmp_path):
    mat = np.ones((2, 2), dtype=np.float32)
    path = embedding.write_record(tmp_path, embedding.CacheRecord("m", 2, mat))
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(embedding.CorruptRecord):
        embedding.read_record(tmp_path, "m")


def test_synth_deterministic():
    img, pr = _image(), _prompt(stats=_stats([1.0, 2.0]))
    a = embedding.synth_embed(img, pr, 10, 16, seed=5)
    b = embedding.synth_embed(img, pr, 10, 16, seed=5)
    assert np.array_equal(a, b)


def test_synth_rows_unit_norm_before_bias():
    img = _image(3)
    pr = _prompt("some prompt", stats=None)  # no stats -> no bias applied
    mat = embedding.synth_embed(img, pr, 12, 24, seed=9)
    norms = np.linalg.norm(mat.astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-5


def test_synth_bias_changes_only_leading_rows():
    img = _image(4)
    text = "prompt text"
    base = embedding.synth_embed(img, _prompt(text, stats=None), 10, 8, seed=1)
    biased = embedding.synth_embed(img, _prompt(text, stats=_stats([0.5, -1.0])), 10, 8, seed=1)
    assert not np.array_equal(base[:2], biased[:2])
    assert np.array_equal(base[2:], biased[2:])


def test_synth_prompt_avalanche():
    rng = np.random.default_rng(8)
    img = _image(5)
    for _ in range(100):
        n = int(rng.integers(5, 40))
        chars = rng.integers(97, 123, size=n)
        text = "".join(map(chr, chars))
        pos = int(rng.integers(0, n))
        flipped = text[:pos] + chr(97 + (ord(text[pos]) - 97 + 1) % 26) + text[pos + 1:]
        a = embedding.synth_embed(img, _prompt(text), 6, 8, seed=3)
        b = embedding.synth_embed(img, _prompt(flipped), 6, 8, seed=3)
        assert np.any(a != b)


def test_synth_image_sensitivity():
    pr = _prompt("fixed")
    a = embedding.synth_embed(_image(1), pr, 6, 8, seed=3)
    b = embedding.synth_embed(_image(2), pr, 6, 8, seed=3)
    assert np.any(a != b)


def test_synthetic_provider_shape():
    provider = embedding.SyntheticProvider(s_tokens=10, d_m=16, seed=0)
    mat = embedding.get_embedding(provider, "s", _image(), _prompt())
    assert mat.shape == (10, 16)
    assert mat.dtype == np.float32


def test_file_provider_round_trip(tmp_path):
    mat = np.random.default_rng(3).normal(size=(9, 7)).astype(np.float32)
    embedding.write_record(tmp_path, embedding.CacheRecord("abc", 3, mat))
    provider = embedding.FileCacheProvider(tmp_path)
    got = embedding.get_embedding(provider, "abc", None, None)
    assert got.tobytes() == mat.tobytes()


def test_file_provider_miss(tmp_path):
    provider = embedding.FileCacheProvider(tmp_path)
    with pytest.raises(embedding.NotFound):
        embedding.get_embedding(provider, "missing", None, None)


def test_file_provider_dimension_check(tmp_path):
    mat = np.ones((4, 6), dtype=np.float32)
    embedding.write_record(tmp_path, embedding.CacheRecord("d", 3, mat))
    provider = embedding.FileCacheProvider(tmp_path, expected_d_m=9)
    with pytest.raises(embedding.DimensionMismatch):
        provider.get("d")


def test_sanitized_filenames(tmp_path):
    mat = np.ones((2, 2), dtype=np.float32)
    rec = embedding.CacheRecord("weird/id:0 x", 1, mat)
    path = embedding.write_record(tmp_path, rec)
    assert path.name == "weird_id_0_x.emb"
    back = embedding.read_record(tmp_path, "weird/id:0 x")
    assert back.sample_id == "weird/id:0 x"


def test_default_layer_offset_is_three():
    assert embedding.DEFAULT_LAYER_OFFSET == 3
