"""Experiment configuration: a flat key=value text format with typed fields.

Every key can be overridden on the command line as --key=value, and the
STDA_SEED environment variable overrides the seed. Serialisation round-trips
losslessly (floats are written with repr).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from ..data import DEFAULT_RATIOS

SEED_ENV_VAR = "STDA_SEED"


@dataclass
class ExperimentConfig:
    preset: str = "tiny"  # model widths: tiny | paper
    head_preset: str = ""  # classifier widths; empty inherits preset
    backbone: str = "residual_head"
    fusion_mode: str = "blend"  # blend | cross_attention
    fusion_alpha: float = 0.5
    fusion_token_downsample: int = 0  # 0 = auto (4 at image_size >= 128 else 1)
    da_enabled: bool = True
    da_freeze: bool = False
    temporal_enabled: bool = True
    temporal_hidden_factor: int = 4
    t_len: int = 4
    image_size: int = 32
    seed: int = 0
    strict_determinism: bool = True
    data_manifest: str = ""  # empty = generate synthetic data in memory
    synth_n: int = 300
    synth_ratio_brake: float = DEFAULT_RATIOS[0]
    synth_ratio_right: float = DEFAULT_RATIOS[1]
    synth_ratio_left: float = DEFAULT_RATIOS[2]
    synth_noise: float = 0.05
    pretrain_lr: float = 0.02
    pretrain_momentum: float = 0.9
    pretrain_lr_decay: float = 0.8
    pretrain_epochs: int = 3
    pretrain_batch: int = 8
    train_lr: float = 0.0001
    train_lr_decay: float = 1.0
    train_epochs: int = 10
    train_batch: int = 8
    cost_mode: str = "default"  # default | uniform
    iba_alpha: float = 0.1
    out_dir: str = "runs"

    def synth_ratios(self) -> tuple:
        return (self.synth_ratio_brake, self.synth_ratio_right, self.synth_ratio_left)

    def validate(self) -> "ExperimentConfig":
        if self.preset not in ("tiny", "paper"):
            raise ValueError(f"preset must be tiny or paper, got '{self.preset}'")
        if self.head_preset not in ("", "tiny", "paper"):
            raise ValueError(f"head.preset must be tiny or paper, got '{self.head_preset}'")
        if self.fusion_mode not in ("blend", "cross_attention"):
            raise ValueError(f"fusion.mode must be blend or cross_attention, got '{self.fusion_mode}'")
        if not 0.0 <= self.fusion_alpha <= 1.0:
            raise ValueError(f"fusion.alpha must lie in [0,1], got {self.fusion_alpha}")
        if self.cost_mode not in ("default", "uniform"):
            raise ValueError(f"cost.mode must be default or uniform, got '{self.cost_mode}'")
        if self.t_len < 1:
            raise ValueError("t_len must be at least 1")
        if self.image_size % 32:
            raise ValueError(f"image_size must divide by 32, got {self.image_size}")
        return self


# dotted config keys <-> dataclass fields
KEYMAP = {
    "preset": "preset",
    "head.preset": "head_preset",
    "backbone": "backbone",
    "fusion.mode": "fusion_mode",
    "fusion.alpha": "fusion_alpha",
    "fusion.token_downsample": "fusion_token_downsample",
    "da.enabled": "da_enabled",
    "da.freeze": "da_freeze",
    "temporal.enabled": "temporal_enabled",
    "temporal.hidden_factor": "temporal_hidden_factor",
    "t_len": "t_len",
    "image_size": "image_size",
    "seed": "seed",
    "strict_determinism": "strict_determinism",
    "data.manifest": "data_manifest",
    "synth.n": "synth_n",
    "synth.ratio_brake": "synth_ratio_brake",
    "synth.ratio_right": "synth_ratio_right",
    "synth.ratio_left": "synth_ratio_left",
    "synth.noise": "synth_noise",
    "pretrain.lr": "pretrain_lr",
    "pretrain.momentum": "pretrain_momentum",
    "pretrain.lr_decay": "pretrain_lr_decay",
    "pretrain.epochs": "pretrain_epochs",
    "pretrain.batch": "pretrain_batch",
    "train.lr": "train_lr",
    "train.lr_decay": "train_lr_decay",
    "train.epochs": "train_epochs",
    "train.batch": "train_batch",
    "cost.mode": "cost_mode",
    "iba.alpha": "iba_alpha",
    "out_dir": "out_dir",
}
FIELD_TO_KEY = {v: k for k, v in KEYMAP.items()}
_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(field_name: str, raw: str):
    typ = _FIELD_TYPES[field_name]
    if typ in ("bool", bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from '{raw}'")
    if typ in ("int", int):
        return int(raw)
    if typ in ("float", float):
        return float(raw)
    return raw


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = ["# driversight experiment config"]
    for key in KEYMAP:
        value = getattr(cfg, KEYMAP[key])
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{key}={rendered}")
    return "\n".join(lines) + "\n"


def config_from_pairs(pairs: dict[str, str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    apply_overrides(cfg, pairs)
    return cfg


def apply_overrides(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    for key, raw in pairs.items():
        if key not in KEYMAP:
            raise ValueError(f"unknown config key '{key}' (known: {', '.join(sorted(KEYMAP))})")
        setattr(cfg, KEYMAP[key], _parse_value(KEYMAP[key], raw))
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got '{line}'")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None, env=None) -> ExperimentConfig:
    """File values, then --key=value overrides, then the seed env var."""
    cfg = ExperimentConfig()
    if path is not None:
        text = Path(path).read_text()
        apply_overrides(cfg, parse_config_text(text))
    if overrides:
        apply_overrides(cfg, overrides)
    env = os.environ if env is None else env
    if SEED_ENV_VAR in env:
        cfg.seed = int(env[SEED_ENV_VAR])
    return cfg.validate()
