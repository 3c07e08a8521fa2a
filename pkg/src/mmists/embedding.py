"""Token-embedding supply for the multimodal branch.

Embeddings are (S, d_m) float32 matrices, either read from an on-disk cache of
precomputed model hidden states ("MMEC" files, one per sample id) or produced
by a deterministic synthetic generator that hashes the image and prompt bytes
and plants the per-variable statistics into the leading rows so downstream
fusion has recoverable cross-modal signal.
"""

from __future__ import annotations

import hashlib
import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import Prompt, ResizedImage

DEFAULT_LAYER_OFFSET = 3  # k-th-from-last hidden layer recorded in cache headers

MMEC_MAGIC = b"MMEC"
MMEC_VERSION = 1


class NotFound(Exception):
    pass


class CorruptRecord(Exception):
    pass


class DimensionMismatch(Exception):
    pass


@dataclass(frozen=True)
class CacheRecord:
    sample_id: str
    layer_offset: int
    data: np.ndarray  # (S, d_m) float32

    def __post_init__(self):
        if self.layer_offset < 1:
            raise ValueError("layer_offset must be >= 1")
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch(f"embedding matrix must be (S, d_m), got {arr.shape}")

    @property
    def shape(self):
        return self.data.shape


def sanitize_id(sample_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", sample_id)


def record_path(cache_dir, sample_id: str) -> Path:
    return Path(cache_dir) / (sanitize_id(sample_id) + ".emb")


def write_record(cache_dir, record: CacheRecord) -> Path:
    arr = np.ascontiguousarray(record.data, dtype="<f4")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding payload must be finite")
    s, d_m = arr.shape
    payload = arr.tobytes(order="C")
    id_bytes = record.sample_id.encode("utf-8")
    path = record_path(cache_dir, record.sample_id)
    with open(path, "wb") as fh:
        fh.write(MMEC_MAGIC)
        fh.write(struct.pack("<HHII", MMEC_VERSION, record.layer_offset, s, d_m))
        fh.write(struct.pack("<H", len(id_bytes)))
        fh.write(id_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    return path


def read_record(cache_dir, sample_id: str) -> CacheRecord:
    path = record_path(cache_dir, sample_id)
    if not path.exists():
        raise NotFound(f"no cached embedding for sample id {sample_id!r}")
    blob = path.read_bytes()
    try:
        if blob[:4] != MMEC_MAGIC:
            raise CorruptRecord(f"{path}: bad magic")
        version, layer_offset, s, d_m = struct.unpack("<HHII", blob[4:16])
        if version != MMEC_VERSION:
            raise CorruptRecord(f"{path}: unsupported version {version}")
        (id_len,) = struct.unpack("<H", blob[16:18])
        stored_id = blob[18:18 + id_len].decode("utf-8")
        off = 18 + id_len
        n_bytes = s * d_m * 4
        payload = blob[off:off + n_bytes]
        if len(payload) != n_bytes:
            raise CorruptRecord(f"{path}: truncated payload")
        (crc,) = struct.unpack("<I", blob[off + n_bytes:off + n_bytes + 4])
    except (struct.error, IndexError, UnicodeDecodeError) as exc:
        raise CorruptRecord(f"{path}: malformed header ({exc})") from exc
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptRecord(f"{path}: checksum mismatch")
    if stored_id != sample_id:
        raise NotFound(f"{path}: holds sample id {stored_id!r}, wanted {sample_id!r}")
    data = np.frombuffer(payload, dtype="<f4").reshape(s, d_m)
    return CacheRecord(sample_id=stored_id, layer_offset=layer_offset, data=data)


# ---------------------------------------------------------------------------
# deterministic synthetic embeddings

_HASH_SEP = b"\x1f"


def _content_hash(image: ResizedImage, prompt: Prompt) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(np.ascontiguousarray(image.pixels, dtype="<f4").tobytes(order="C"))
    h.update(_HASH_SEP)
    h.update(prompt.rendered.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def synth_embed(image: ResizedImage, prompt: Prompt, s_tokens: int, d_m: int,
                seed: int) -> np.ndarray:
    """Pure function of (image bytes, prompt bytes, S, d_m, seed).

    Rows are unit-norm PRNG draws keyed by seed xor content hash; when the
    prompt carries per-variable statistics, row n is additively biased by a
    fixed projection of (mu, sigma, rho, c) so the matrix encodes the sample.
    """
    if s_tokens < 1 or d_m < 1:
        raise ValueError("S and d_m must be >= 1")
    mixed = (int(seed) ^ _content_hash(image, prompt)) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.Generator(np.random.PCG64(mixed))
    rows = rng.standard_normal((s_tokens, d_m))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    if prompt.stats is not None:
        proj_rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
        proj = proj_rng.standard_normal((4, d_m)) * 0.5
        n = min(len(prompt.stats), s_tokens)
        svec = np.array([[st.mu, st.sigma, st.rho, st.c] for st in prompt.stats[:n]])
        rows[:n] += svec @ proj
    return rows.astype("<f4")


# ---------------------------------------------------------------------------
# providers


class SyntheticProvider:
    """Generates embeddings on the fly; pure in (image, prompt, config)."""

    kind = "synthetic"

    def __init__(self, s_tokens: int, d_m: int, seed: int):
        self.s_tokens = s_tokens
        self.d_m = d_m
        self.seed = seed

    def get(self, sample_id, image, prompt):
        return synth_embed(image, prompt, self.s_tokens, self.d_m, self.seed)


class FileCacheProvider:
    """Reads exporter-written MMEC records; optionally enforces dimensions."""

    kind = "file"

    def __init__(self, cache_dir, expected_d_m=None):
        self.cache_dir = Path(cache_dir)
        self.expected_d_m = expected_d_m

    def get(self, sample_id, image=None, prompt=None):
        rec = read_record(self.cache_dir, sample_id)
        if self.expected_d_m is not None and rec.data.shape[1] != self.expected_d_m:
            raise DimensionMismatch(
                f"cache for {sample_id!r} has d_m={rec.data.shape[1]}, "
                f"expected {self.expected_d_m}")
        return np.asarray(rec.data)


def get_embedding(provider, sample_id, image, prompt) -> np.ndarray:
    """Fetch the (S, d_m) float32 token matrix for one sample."""
    return provider.get(sample_id, image, prompt)
