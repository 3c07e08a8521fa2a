"""Run configuration: flat key-value file with one section per module, flag
overrides, and the root-seed fan-out.

Precedence: built-in defaults < config file < --paper-mode < explicit flags.
Every randomness consumer derives its own sub-seed from the root seed via a
keyed 64-bit hash of a fixed label, so one integer pins the whole run.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields


class ConfigInvalid(Exception):
    pass


class MissingInput(Exception):
    pass


def derive_seed(root_seed: int, label: str) -> int:
    """Stable sub-seed for a named module, keyed by the root seed."""
    key = (int(root_seed) & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


SEED_LABELS = {
    "gen": "data-gen",
    "split": "split",
    "provider": "provider",
    "model": "model-init",
    "train": "train-shuffle",
}


@dataclass
class RunConfig:
    run_seed: int = 0

    data_n_vars: int = 4
    data_l_max: int = 16
    data_samples: int = 200
    data_obs_rate: float = 0.7
    data_noise: float = 0.1
    data_horizon: int = 3
    data_l_cap: int = 0          # 0: pad to the dataset-wide max length

    image_height: int = 32
    image_width: int = 32
    image_normalized: bool = False   # value channel from normalized values

    prompt_tau: float = 0.9
    prompt_dataset_name: str = "synthetic"
    prompt_template_dir: str = ""

    provider_kind: str = "synthetic"
    provider_s_tokens: int = 24
    provider_d_m: int = 32
    provider_cache_dir: str = ""

    model_d: int = 64
    model_heads: int = 4
    model_k_layers: int = 3
    model_l_t: int = 3
    model_l_v: int = 3
    model_gate_hidden: int = 16
    model_fusion_residual: bool = True

    train_lr: float = 1e-4
    train_batch_size: int = 8
    train_epochs: int = 100
    train_patience: int = 20
    train_include_empty_variable_queries: bool = True

    def validate(self):
        if self.provider_kind not in ("synthetic", "file"):
            raise ConfigInvalid(f"provider kind must be synthetic or file, "
                                f"got {self.provider_kind!r}")
        if self.prompt_tau < 0.0 or self.prompt_tau > 1.0:
            raise ConfigInvalid(f"prompt tau must lie in [0, 1], got {self.prompt_tau}")
        if self.train_lr <= 0 or self.train_batch_size < 1 or self.train_epochs < 1:
            raise ConfigInvalid("train lr/batch_size/epochs out of range")
        if self.image_height < 1 or self.image_width < 1:
            raise ConfigInvalid("image resolution must be >= 1x1")

    def apply_paper_mode(self):
        """Pin the full-scale defaults: lr 1e-5, batch 8, three-layer stacks."""
        self.train_lr = 1e-5
        self.train_batch_size = 8
        self.model_k_layers = 3
        self.model_l_t = 3
        self.model_l_v = 3

    def seed_for(self, module: str) -> int:
        return derive_seed(self.run_seed, SEED_LABELS[module])


def _section_key(field_name):
    section, _, key = field_name.partition("_")
    return section, key


def field_specs():
    """(field_name, section, key, type) for every config entry."""
    return [(f.name, *_section_key(f.name), f.type) for f in fields(RunConfig)]


def _parse_value(raw: str, ftype, where: str):
    raw = raw.strip()
    if ftype in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigInvalid(f"{where}: expected a boolean, got {raw!r}")
    try:
        if ftype in (int, "int"):
            return int(raw)
        if ftype in (float, "float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"{where}: {exc}") from exc
    return raw


def load_config(path=None) -> RunConfig:
    """Parse an INI-style config file; unknown sections or keys are rejected."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise MissingInput(f"config file not found: {path}")
    known = {(section, key): (name, ftype)
             for name, section, key, ftype in field_specs()}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if (section, key) not in known:
                raise ConfigInvalid(f"unknown config key [{section}] {key}")
            name, ftype = known[(section, key)]
            setattr(cfg, name, _parse_value(raw, ftype, f"[{section}] {key}"))
    return cfg
