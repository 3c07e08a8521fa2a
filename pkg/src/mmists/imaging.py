"""Irregularity-aware image construction and statistics-bearing text prompts.

A canonical sample becomes a three-channel image (values, observation mask,
per-variable time gaps) plus a prompt that concatenates image/data/task
instructions with per-variable statistics lines, filtered by a sparsity
threshold. Images travel as portable "MMI1" tensor files, prompts as UTF-8.
"""

from __future__ import annotations

import importlib.resources
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import CanonicalSample

DEFAULT_TAU = 0.9


@dataclass(frozen=True)
class IrregularityImage:
    C0: np.ndarray  # observed values
    C1: np.ndarray  # observation mask
    C2: np.ndarray  # time gap to the previous observation of the same variable

    @property
    def stacked(self):
        return np.stack([self.C0, self.C1, self.C2])


@dataclass(frozen=True)
class ResizedImage:
    pixels: np.ndarray  # (3, H, W), each channel min-max scaled into [0, 1]


@dataclass(frozen=True)
class VariableStats:
    mu: float
    sigma: float
    x_min: float
    x_max: float
    rho: float   # missing rate
    c: float     # normalized observation count, rho + c == 1
    count: int
    has_values: bool


@dataclass(frozen=True)
class Prompt:
    parts: tuple
    rendered: str
    stats: tuple | None = None  # machine-readable side channel for providers

    @classmethod
    def empty(cls):
        return cls(parts=(), rendered="", stats=None)


def build_image(canon: CanonicalSample) -> IrregularityImage:
    m = canon.M
    c0 = canon.X * m  # padded cells are zero by invariant; enforce anyway
    c2 = np.zeros_like(canon.T)
    for n in range(canon.n_vars):
        cnt = int(m[n].sum())
        if cnt > 1:
            c2[n, 1:cnt] = np.diff(canon.T[n, :cnt])
    return IrregularityImage(C0=c0, C1=m.copy(), C2=c2)


def resize_normalize(image: IrregularityImage, out_h: int, out_w: int) -> ResizedImage:
    """Bilinear resize per channel, then min-max rescale each channel to [0, 1].

    A constant channel (max == min) maps to all zeros.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("target resolution must be >= 1x1")
    channels = []
    for ch in (image.C0, image.C1, image.C2):
        resized = kernels.bilinear_resize(np.ascontiguousarray(ch, dtype=np.float64),
                                          out_h, out_w)
        lo, hi = resized.min(), resized.max()
        if hi > lo:
            channels.append((resized - lo) / (hi - lo))
        else:
            channels.append(np.zeros_like(resized))
    return ResizedImage(pixels=np.stack(channels))


def compute_stats(canon: CanonicalSample):
    """Per-variable mean/std/range over observed entries, missing rate over L.

    Sums run in plain left-to-right order so results match a direct-summation
    recomputation exactly.
    """
    out = []
    length = canon.length
    for n in range(canon.n_vars):
        vals = [float(canon.X[n, l]) for l in range(length) if canon.M[n, l] == 1.0]
        cnt = len(vals)
        rho = 1.0 - cnt / length
        if cnt == 0:
            out.append(VariableStats(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0, False))
            continue
        mu = sum(vals) / cnt
        var = sum((v - mu) ** 2 for v in vals) / cnt
        out.append(VariableStats(
            mu=mu,
            sigma=var ** 0.5,                       # population std
            x_min=min(vals),
            x_max=max(vals),
            rho=rho,
            c=1.0 - rho,
            count=cnt,
            has_values=True,
        ))
    return out


def format_stat_line(n: int, st: VariableStats) -> str:
    return (f"Variable {n}: mean {st.mu:.4g}, "
            f"range [{st.x_min:.4g}, {st.x_max:.4g}].")


def assemble_prompt(stats, tau, p_img: str, p_data: str, p_task: str) -> Prompt:
    """Concatenate image/data/task instructions with filtered statistics lines.

    A variable's line is included only when it has observations and its
    missing rate does not exceed tau.
    """
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    parts = [p_img, p_data, p_task]
    for n, st in enumerate(stats):
        if st.has_values and st.rho <= tau:
            parts.append(format_stat_line(n, st))
    return Prompt(parts=tuple(parts), rendered="\n".join(parts), stats=tuple(stats))


def load_templates(template_dir=None, dataset_name="synthetic"):
    """Read the three prompt templates; p_data gets {dataset_name} substituted."""
    def read(name):
        if template_dir is not None:
            with open(f"{template_dir}/{name}", encoding="utf-8") as fh:
                return fh.read().strip()
        ref = importlib.resources.files("mmists").joinpath("templates", name)
        return ref.read_text(encoding="utf-8").strip()

    p_img = read("p_img.txt")
    p_data = read("p_data.txt").replace("{dataset_name}", dataset_name)
    p_task = read("p_task.txt")
    return p_img, p_data, p_task


# ---------------------------------------------------------------------------
# portable tensor file: magic "MMI1", three u32 LE dims, row-major f32 LE

MMI_MAGIC = b"MMI1"


def write_mmi1(path, tensor):
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"MMI1 stores rank-3 tensors, got rank {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(MMI_MAGIC)
        fh.write(struct.pack("<III", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_mmi1(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MMI_MAGIC:
            raise ValueError(f"{path}: not an MMI1 tensor file")
        dims = struct.unpack("<III", fh.read(12))
        n = dims[0] * dims[1] * dims[2]
        payload = fh.read(n * 4)
        if len(payload) != n * 4:
            raise ValueError(f"{path}: truncated MMI1 payload")
        return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
