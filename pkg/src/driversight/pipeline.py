"""End-to-end assembly: attention prediction, fusion, temporal compression,
behavior classification, with the ablation switches the experiment grid
toggles.

Ablation semantics: with the attention module disabled, fusion receives a
neutral all-0.5 map so the fusion stage keeps operating; with the temporal
module disabled, the classifier sees the last fused frame only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .classifier import PAPER_CLASSIFIER, TINY_CLASSIFIER, BehaviorClassifier, N_CLASSES
from .fusion import CrossAttentionFusion, blend_fuse, channel_extend
from .saliency import PAPER_SALIENCY, TINY_SALIENCY, SaliencyPredictor
from .temporal import TemporalEncoder
from .tensor import Tensor

FUSION_MODES = ("blend", "cross_attention")


@dataclass
class PipelineSpec:
    """Structural description of one model instance."""

    preset: str = "tiny"  # saliency widths: tiny | paper
    head_preset: str = ""  # classifier widths; empty inherits preset
    fusion_mode: str = "blend"
    fusion_alpha: float = 0.5
    cross_token_dim: int = 64
    cross_downsample: int = 0  # 0 = auto: 4 at image_size >= 128, else 1
    da_enabled: bool = True
    temporal_enabled: bool = True
    t_len: int = 4
    image_size: int = 32
    temporal_hidden_factor: int = 4
    backbone: str = "residual_head"  # classifier plug-in name

    def resolved_downsample(self) -> int:
        if self.cross_downsample > 0:
            return self.cross_downsample
        return 4 if self.image_size >= 128 else 1


# -- backbone plug-in registry ---------------------------------------------------

_BACKBONES: dict[str, Callable] = {}


def register_backbone(name: str, builder: Callable) -> None:
    """builder(image_size, n_classes, rng, dtype) -> Module with (B,3,H,W)->(B,n) forward."""
    if name in _BACKBONES:
        raise ValueError(f"backbone '{name}' already registered")
    _BACKBONES[name] = builder


def backbone_names() -> list[str]:
    return sorted(_BACKBONES)


def build_backbone(name: str, image_size: int, n_classes: int, rng, dtype=np.float32, preset: str = "tiny"):
    if name not in _BACKBONES:
        raise KeyError(f"unknown backbone '{name}' (registered: {', '.join(backbone_names())})")
    return _BACKBONES[name](image_size=image_size, n_classes=n_classes, rng=rng, dtype=dtype, preset=preset)


def _build_residual_head(image_size, n_classes, rng, dtype, preset):
    cfg = PAPER_CLASSIFIER if preset == "paper" else TINY_CLASSIFIER
    return BehaviorClassifier(cfg, n_classes=n_classes, rng=rng, dtype=dtype)


class _PlainCnn(nn.Module):
    """Small VGG-style stack: conv/pool blocks then an MLP."""

    def __init__(self, image_size, n_classes, rng, dtype):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 12, 3, padding=1, bias=True, rng=rng, dtype=dtype)
        self.bn1 = nn.BatchNorm2d(12, dtype=dtype)
        self.conv2 = nn.Conv2d(12, 24, 3, padding=1, bias=True, rng=rng, dtype=dtype)
        self.bn2 = nn.BatchNorm2d(24, dtype=dtype)
        self.conv3 = nn.Conv2d(24, 32, 3, padding=1, bias=True, rng=rng, dtype=dtype)
        self.bn3 = nn.BatchNorm2d(32, dtype=dtype)
        self.fc = nn.Linear(32, n_classes, rng=rng, dtype=dtype)

    def forward(self, x):
        h = T.max_pool2d(T.relu(self.bn1(self.conv1(x))), 2)
        h = T.max_pool2d(T.relu(self.bn2(self.conv2(h))), 2)
        h = T.relu(self.bn3(self.conv3(h)))
        return self.fc(h.mean(axis=(2, 3)))


class _PatchMlp(nn.Module):
    """Average-pool to a coarse grid, flatten, two-layer MLP. Keeps enough
    spatial information to localize objects without any convolutions."""

    GRID = 4

    def __init__(self, image_size, n_classes, rng, dtype):
        super().__init__()
        if image_size % self.GRID:
            raise ValueError(f"image size {image_size} must divide by {self.GRID}")
        fin = 3 * self.GRID * self.GRID
        self.fc1 = nn.Linear(fin, 64, rng=rng, dtype=dtype)
        self.fc2 = nn.Linear(64, 64, rng=rng, dtype=dtype)
        self.fc3 = nn.Linear(64, n_classes, rng=rng, dtype=dtype)

    def forward(self, x):
        b, c, h, w = x.shape
        f = h // self.GRID
        patches = x.reshape(b, c, self.GRID, f, self.GRID, f).mean(axis=(3, 5))
        flat = patches.reshape(b, c * self.GRID * self.GRID)
        return self.fc3(T.relu(self.fc2(T.relu(self.fc1(flat)))))


register_backbone("residual_head", _build_residual_head)
register_backbone("plain_cnn", lambda image_size, n_classes, rng, dtype, preset: _PlainCnn(image_size, n_classes, rng, dtype))
register_backbone("patch_mlp", lambda image_size, n_classes, rng, dtype, preset: _PatchMlp(image_size, n_classes, rng, dtype))


class BehaviorPredictor(nn.Module):
    """The full frames -> behavior-logits model."""

    def __init__(self, spec: PipelineSpec, *, rng, dtype=np.float32):
        super().__init__()
        if spec.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion mode must be one of {FUSION_MODES}, got '{spec.fusion_mode}'")
        self.spec = spec
        sal_cfg = PAPER_SALIENCY if spec.preset == "paper" else TINY_SALIENCY
        if spec.da_enabled:
            self.saliency = SaliencyPredictor(sal_cfg, rng=rng, dtype=dtype)
        else:
            self.saliency = None
        if spec.fusion_mode == "cross_attention":
            self.fuser = CrossAttentionFusion(
                spec.cross_token_dim, spec.resolved_downsample(), rng=rng, dtype=dtype
            )
        else:
            self.fuser = None
        if spec.temporal_enabled:
            self.temporal = TemporalEncoder(
                spec.t_len, spec.temporal_hidden_factor, rng=rng, dtype=dtype
            )
        else:
            self.temporal = None
        self.classifier = build_backbone(
            spec.backbone, spec.image_size, N_CLASSES, rng, dtype=dtype,
            preset=spec.head_preset or spec.preset,
        )
        self._dtype = dtype

    def predict_maps(self, frames: Tensor) -> Tensor:
        """(B, T, 3, H, W) -> (B, T, 1, H, W); neutral 0.5 maps when disabled."""
        if self.saliency is not None:
            return self.saliency(frames)
        b, t, _, h, w = frames.shape
        return Tensor(np.full((b, t, 1, h, w), 0.5, dtype=frames.data.dtype))

    def fuse(self, frames: Tensor, maps: Tensor) -> Tensor:
        attn3 = channel_extend(maps)
        if self.fuser is not None:
            return self.fuser(frames, attn3)
        return blend_fuse(frames, attn3, self.spec.fusion_alpha)

    def encode_time(self, fused: Tensor) -> Tensor:
        if self.temporal is not None:
            return self.temporal(fused)
        t = fused.shape[1]
        return fused[:, t - 1]

    def forward(self, frames: Tensor) -> Tensor:
        frames = T.as_tensor(frames)
        if frames.ndim != 5:
            raise ValueError(f"expected (B, T, 3, H, W) frames, got shape {frames.shape}")
        maps = self.predict_maps(frames)
        fused = self.fuse(frames, maps)
        feature = self.encode_time(fused)
        return self.classifier(feature)
