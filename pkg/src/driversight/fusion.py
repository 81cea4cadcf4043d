"""Fusing predicted attention maps with the raw frame stream.

Two strategies produce the attention-integrated sequence, shaped like the
input frames: a per-pixel convex blend, and token cross-attention where
queries come from the attention stream and keys/values from the frames.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


def channel_extend(attention: Tensor) -> Tensor:
    """Replicate single-channel maps to 3 channels: (..., 1, H, W) -> (..., 3, H, W)."""
    attention = T.as_tensor(attention)
    if attention.shape[-3] != 1:
        raise ValueError(f"expected single-channel maps, got {attention.shape[-3]} channels")
    return T.concat([attention, attention, attention], axis=-3)


def blend_fuse(frames: Tensor, attention3: Tensor, alpha: float = 0.5) -> Tensor:
    """Per-pixel convex combination (1-alpha)*frame + alpha*attention."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"blend alpha must lie in [0, 1], got {alpha}")
    frames = T.as_tensor(frames)
    attention3 = T.as_tensor(attention3)
    if frames.shape != attention3.shape:
        raise ValueError(f"shape mismatch: frames {frames.shape} vs attention {attention3.shape}")
    return (1.0 - alpha) * frames + alpha * attention3


def _block_mean_pool(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    lead = x.shape[:-2]
    h, w = x.shape[-2], x.shape[-1]
    if h % factor or w % factor:
        raise ValueError(f"spatial dims {h}x{w} not divisible by downsample factor {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


class CrossAttentionFusion(nn.Module):
    """Token cross-attention between attention maps and frames (per timestep).

    Pixels are tokens (3-vectors). A shared projection lifts both streams to
    `token_dim`; attention tokens query the frame tokens; the attended result
    plus the query passes through layer norm and is projected back to 3
    channels. An optional spatial downsample bounds the token count at large
    resolutions and is undone by nearest-neighbor upsampling.
    """

    def __init__(self, token_dim: int = 64, downsample: int = 1, *, rng, dtype=np.float32):
        super().__init__()
        self.token_dim = token_dim
        self.downsample = downsample
        self.mlp_fwd = nn.Linear(3, token_dim, rng=rng, dtype=dtype)
        self.norm = nn.LayerNorm(token_dim, dtype=dtype)
        self.mlp_back = nn.Linear(token_dim, 3, rng=rng, dtype=dtype)

    def fuse_tokens(self, frame_tokens: Tensor, attn_tokens: Tensor) -> Tensor:
        """(N, S, 3) token batches -> (N, S, 3) fused tokens."""
        if frame_tokens.shape != attn_tokens.shape:
            raise ValueError(
                f"token count mismatch: frames {frame_tokens.shape} vs attention {attn_tokens.shape}"
            )
        a_mlp = self.mlp_fwd(attn_tokens)
        s_mlp = self.mlp_fwd(frame_tokens)
        scores = (a_mlp @ s_mlp.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.token_dim))
        attended = T.softmax(scores, axis=-1) @ s_mlp
        return self.mlp_back(self.norm(a_mlp + attended))

    def attention_rows(self, frame_tokens: Tensor, attn_tokens: Tensor) -> Tensor:
        """Softmax rows (N, S, S), exposed for the row-sum invariant."""
        a_mlp = self.mlp_fwd(attn_tokens)
        s_mlp = self.mlp_fwd(frame_tokens)
        return T.softmax((a_mlp @ s_mlp.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.token_dim)), axis=-1)

    def forward(self, frames: Tensor, attention3: Tensor) -> Tensor:
        """frames, attention3: (B, T, 3, H, W) -> fused (B, T, 3, H, W)."""
        frames = T.as_tensor(frames)
        attention3 = T.as_tensor(attention3)
        if frames.shape != attention3.shape:
            raise ValueError(f"shape mismatch: frames {frames.shape} vs attention {attention3.shape}")
        b, t, c, height, width = frames.shape
        d = self.downsample
        f = _block_mean_pool(frames.reshape(b * t, c, height, width), d)
        a = _block_mean_pool(attention3.reshape(b * t, c, height, width), d)
        hs, ws = f.shape[-2], f.shape[-1]
        # one timestep at a time keeps the (S x S) attention matrix bounded
        fused_items = []
        for i in range(b * t):
            ft = f[i].reshape(c, hs * ws).transpose(1, 0).reshape(1, hs * ws, c)
            at = a[i].reshape(c, hs * ws).transpose(1, 0).reshape(1, hs * ws, c)
            tok = self.fuse_tokens(ft, at)
            fused_items.append(tok.reshape(hs * ws, c).transpose(1, 0).reshape(c, hs, ws))
        fused = T.stack(fused_items, axis=0)
        fused = T.upsample_nearest2d(fused, d)
        return fused.reshape(b, t, c, height, width)


def cross_attention_fuse(frames: Tensor, attention3: Tensor, module: CrossAttentionFusion) -> Tensor:
    """Sequence-level entry point: (T, 3, H, W) inputs -> (T, 3, H, W)."""
    frames = T.as_tensor(frames)
    attention3 = T.as_tensor(attention3)
    t, c, height, width = frames.shape
    out = module(frames.reshape(1, t, c, height, width), attention3.reshape(1, t, c, height, width))
    return out.reshape(t, c, height, width)
