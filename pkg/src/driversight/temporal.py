"""Compression of the time axis into a single image-shaped feature.

Each (channel, pixel) location's length-T history is treated as a feature
vector: a two-layer feed-forward expansion (T -> hidden -> T), batch norm
over the resulting features, then a learned linear squeeze T -> 1. The
squeeze initializes to uniform averaging and the FFN can be built as an
exact identity, which makes the bypass behavior testable to the bit.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


def _identity_ffn_weights(t_len: int, hidden: int, dtype):
    """relu(x W1) W2 == x via the [I; -I] embedding (requires hidden >= 2T)."""
    w1 = np.zeros((t_len, hidden), dtype=dtype)
    w2 = np.zeros((hidden, t_len), dtype=dtype)
    w1[:, :t_len] = np.eye(t_len)
    w1[:, t_len : 2 * t_len] = -np.eye(t_len)
    w2[:t_len, :] = np.eye(t_len)
    w2[t_len : 2 * t_len, :] = -np.eye(t_len)
    return w1, w2


class TemporalEncoder(nn.Module):
    """(B, T, 3, H, W) -> (B, 3, H, W), differentiable in all parameters."""

    def __init__(
        self,
        t_len: int,
        hidden_factor: int = 4,
        *,
        rng,
        dtype=np.float32,
        identity_init: bool = True,
        bypass: bool = False,
    ):
        super().__init__()
        if hidden_factor < 1:
            raise ValueError("hidden dimension must be at least T")
        if identity_init and hidden_factor < 2:
            raise ValueError("identity initialisation needs hidden dimension >= 2T")
        self.t_len = t_len
        hidden = hidden_factor * t_len
        self.ffn1 = nn.Linear(t_len, hidden, rng=rng, dtype=dtype)
        # second projection feeds batch norm, which absorbs any bias
        self.ffn2 = nn.Linear(hidden, t_len, bias=False, rng=rng, dtype=dtype)
        self.bn = nn.BatchNorm1d(t_len, ndim=5, dtype=dtype)
        self.squeeze = nn.Linear(t_len, 1, rng=rng, dtype=dtype)
        # uniform-average squeeze makes the constant-in-time bypass exact
        self.squeeze.weight.data = np.full((t_len, 1), 1.0 / t_len, dtype=dtype)
        self.squeeze.bias.data = np.zeros(1, dtype=dtype)
        if identity_init:
            w1, w2 = _identity_ffn_weights(t_len, hidden, dtype)
            if not bypass:
                w1 = w1 + (rng.standard_normal(w1.shape) * 0.01).astype(dtype)
                w2 = w2 + (rng.standard_normal(w2.shape) * 0.01).astype(dtype)
            self.ffn1.weight.data = w1
            self.ffn2.weight.data = w2
        if bypass:
            nn.set_batchnorm_identity(self, True)

    def forward(self, fused: Tensor) -> Tensor:
        fused = T.as_tensor(fused)
        b, t, c, height, width = fused.shape
        if t != self.t_len:
            raise ValueError(f"temporal encoder built for T={self.t_len}, got T={t}")
        x = fused.transpose(0, 2, 3, 4, 1)  # (B, 3, H, W, T)
        h = T.relu(self.ffn1(x))
        h = self.ffn2(h)
        h = self.bn(h)
        out = self.squeeze(h)
        return out.reshape(b, c, height, width)


def temporal_encode(fused: Tensor, encoder: TemporalEncoder) -> Tensor:
    """Sequence-level entry point: (T, 3, H, W) -> (3, H, W)."""
    fused = T.as_tensor(fused)
    t, c, height, width = fused.shape
    out = encoder(fused.reshape(1, t, c, height, width))
    return out.reshape(c, height, width)
