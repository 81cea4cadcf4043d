"""Behavior classification head: residual CNN over the encoded feature,
adaptive average pooling, and an MLP that emits one logit per behavior."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


class BehaviorLabel(IntEnum):
    BRAKE = 0
    TURN_RIGHT = 1
    TURN_LEFT = 2


N_CLASSES = len(BehaviorLabel)


def predict_label(logits) -> BehaviorLabel:
    """Argmax with deterministic tie-break toward the lowest class index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    arr = arr.reshape(-1)
    if not np.isfinite(arr).all():
        raise ValueError("logits contain non-finite values")
    return BehaviorLabel(int(np.argmax(arr)))


class _Bottleneck(nn.Module):
    """1x1 reduce, 3x3, 1x1 expand with BN; projection shortcut when needed."""

    def __init__(self, cin, mid, cout, stride=1, *, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, mid, 1, bias=False, rng=rng, dtype=dtype)
        self.bn1 = nn.BatchNorm2d(mid, dtype=dtype)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride=stride, padding=1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = nn.BatchNorm2d(mid, dtype=dtype)
        self.conv3 = nn.Conv2d(mid, cout, 1, bias=False, rng=rng, dtype=dtype)
        self.bn3 = nn.BatchNorm2d(cout, dtype=dtype)
        self.has_projection = stride != 1 or cin != cout
        if self.has_projection:
            self.proj_conv = nn.Conv2d(cin, cout, 1, stride=stride, bias=False, rng=rng, dtype=dtype)
            self.proj_bn = nn.BatchNorm2d(cout, dtype=dtype)

    def forward(self, x):
        h = T.relu(self.bn1(self.conv1(x)))
        h = T.relu(self.bn2(self.conv2(h)))
        h = self.bn3(self.conv3(h))
        shortcut = self.proj_bn(self.proj_conv(x)) if self.has_projection else x
        return T.relu(h + shortcut)


@dataclass
class ClassifierConfig:
    """stem_channels, then residual stages as (mid, out, blocks, stride)."""

    stem_channels: int
    stem_kernel: int
    stem_stride: int
    stages: list
    mlp_hidden: int


TINY_CLASSIFIER = ClassifierConfig(
    stem_channels=16,
    stem_kernel=3,
    stem_stride=1,
    stages=[(8, 16, 1, 1), (16, 32, 1, 2), (32, 64, 1, 2)],
    mlp_hidden=128,
)

# 101-layer-class residual network: 3+4+23+3 bottlenecks
PAPER_CLASSIFIER = ClassifierConfig(
    stem_channels=64,
    stem_kernel=7,
    stem_stride=2,
    stages=[(64, 256, 3, 1), (128, 512, 4, 2), (256, 1024, 23, 2), (512, 2048, 3, 2)],
    mlp_hidden=256,
)


class BehaviorClassifier(nn.Module):
    """(B, 3, H, W) -> (B, 3) behavior logits."""

    def __init__(self, cfg: ClassifierConfig = TINY_CLASSIFIER, n_classes: int = N_CLASSES, *, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        pad = cfg.stem_kernel // 2
        self.stem_conv = nn.Conv2d(
            3, cfg.stem_channels, cfg.stem_kernel, stride=cfg.stem_stride, padding=pad, bias=False, rng=rng, dtype=dtype
        )
        self.stem_bn = nn.BatchNorm2d(cfg.stem_channels, dtype=dtype)
        blocks = []
        cin = cfg.stem_channels
        for mid, cout, repeats, stride in cfg.stages:
            for i in range(repeats):
                blocks.append(_Bottleneck(cin, mid, cout, stride=stride if i == 0 else 1, rng=rng, dtype=dtype))
                cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.fc1 = nn.Linear(cin, cfg.mlp_hidden, rng=rng, dtype=dtype)
        self.fc2 = nn.Linear(cfg.mlp_hidden, n_classes, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if not np.isfinite(x.data).all():
            raise ValueError("classifier input contains non-finite values")
        h = T.relu(self.stem_bn(self.stem_conv(x)))
        h = T.max_pool2d(h, 2)
        for blk in self.blocks:
            h = blk(h)
        pooled = h.mean(axis=(2, 3))  # adaptive average pool to 1x1, flattened
        return self.fc2(T.relu(self.fc1(pooled)))


def classify(feature: Tensor, model) -> Tensor:
    """Single-feature entry point: (3, H, W) -> logit vector of length 3."""
    feature = T.as_tensor(feature)
    out = model(feature.reshape(1, *feature.shape))
    return out.reshape(-1)
