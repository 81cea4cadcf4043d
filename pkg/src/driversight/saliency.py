"""Per-frame driver-attention (saliency) prediction.

Pipeline: a MobileNet-style inverted-residual encoder downsamples each frame
by 32, a post-processing 1x1 stage reduces channels, scaled dot-product
spatial attention refines the grid, a convolutional GRU carries state across
the frame history, and an upsampling decoder with a skip connection emits a
per-pixel sigmoid attention map at input resolution.

Shape conventions: public entry points take one sequence (T, 3, H, W);
the batched internals take (B, T, 3, H, W). H and W must divide by 32.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


@dataclass
class SaliencyConfig:
    """Channel widths for the encoder/recurrent/decoder stack.

    stages: inverted-residual stages as (expand, channels_out, repeats, stride).
    The product of stem and stage strides must be 32.
    """

    stem: int
    stages: list
    c_enc: int
    c_post: int
    c_h: int
    gru_kernel: int = 3

    def total_stride(self) -> int:
        s = 2  # stem
        for _, _, _, stride in self.stages:
            s *= stride
        return s


TINY_SALIENCY = SaliencyConfig(
    stem=8,
    stages=[(2, 12, 1, 2), (2, 16, 1, 2), (2, 24, 1, 2), (2, 32, 1, 2)],
    c_enc=64,
    c_post=16,
    c_h=8,
)

PAPER_SALIENCY = SaliencyConfig(
    stem=32,
    stages=[
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ],
    c_enc=1280,
    c_post=256,
    c_h=128,
)


class EncoderFeatures(NamedTuple):
    m: Tensor  # (N, c_enc, H/32, W/32) backbone output
    p: Tensor  # (N, c_post, H/32, W/32) after channel reduction


def _validate_frames(data: np.ndarray) -> None:
    h, w = data.shape[-2], data.shape[-1]
    if h % 32 or w % 32:
        raise ValueError(f"frame size {h}x{w} must be divisible by 32")
    if not np.isfinite(data).all():
        raise ValueError("frames contain non-finite values")


class FrameEncoder(nn.Module):
    """MobileNet-style backbone plus the 1x1 channel-reducing post stage."""

    def __init__(self, cfg: SaliencyConfig, *, rng, dtype=np.float32):
        super().__init__()
        if cfg.total_stride() != 32:
            raise ValueError(f"encoder strides multiply to {cfg.total_stride()}, need 32")
        self.cfg = cfg
        self.stem_conv = nn.Conv2d(3, cfg.stem, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype)
        self.stem_bn = nn.BatchNorm2d(cfg.stem, dtype=dtype)
        blocks = []
        cin = cfg.stem
        for expand, cout, repeats, stride in cfg.stages:
            for i in range(repeats):
                blocks.append(
                    nn.InvertedResidual(cin, cout, stride=stride if i == 0 else 1, expand=expand, rng=rng, dtype=dtype)
                )
                cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.head_conv = nn.Conv2d(cin, cfg.c_enc, 1, bias=False, rng=rng, dtype=dtype)
        self.head_bn = nn.BatchNorm2d(cfg.c_enc, dtype=dtype)
        self.post_conv = nn.Conv2d(cfg.c_enc, cfg.c_post, 1, bias=False, rng=rng, dtype=dtype)
        self.post_bn = nn.BatchNorm2d(cfg.c_post, dtype=dtype)

    def forward(self, x: Tensor) -> EncoderFeatures:
        """x: (N, 3, H, W) in [0, 1] -> features at H/32 x W/32."""
        _validate_frames(x.data)
        h = T.relu(self.stem_bn(self.stem_conv(x)))
        for blk in self.blocks:
            h = blk(h)
        m = T.relu(self.head_bn(self.head_conv(h)))
        p = T.relu(self.post_bn(self.post_conv(m)))
        return EncoderFeatures(m=m, p=p)


class SpatialAttention(nn.Module):
    """Scaled dot-product attention over the spatial grid, per item.

    Queries/keys/values come from 1x1 convolutions; the result is scaled by a
    learnable gate (init 0, so the layer starts as the identity) and added to
    the input. Softmax runs over the key/spatial axis.
    """

    def __init__(self, channels: int, *, rng, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.w_q = nn.Conv2d(channels, channels, 1, bias=False, rng=rng, dtype=dtype)
        self.w_k = nn.Conv2d(channels, channels, 1, bias=False, rng=rng, dtype=dtype)
        self.w_v = nn.Conv2d(channels, channels, 1, bias=False, rng=rng, dtype=dtype)
        self.epsilon = nn.Parameter(np.zeros(1, dtype=dtype))

    def attention_weights(self, x: Tensor) -> Tensor:
        """(N, SP, SP) softmax rows; exposed for the row-sum invariant tests."""
        n, c, h, w = x.shape
        q = self.w_q(x).reshape(n, c, h * w).transpose(0, 2, 1)
        k = self.w_k(x).reshape(n, c, h * w).transpose(0, 2, 1)
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(c))
        return T.softmax(scores, axis=-1)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"spatial attention built for {self.channels} channels, got {c}")
        q = self.w_q(x).reshape(n, c, h * w).transpose(0, 2, 1)
        k = self.w_k(x).reshape(n, c, h * w).transpose(0, 2, 1)
        v = self.w_v(x).reshape(n, c, h * w).transpose(0, 2, 1)
        weights = T.softmax((q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(c)), axis=-1)
        tokens = x.reshape(n, c, h * w).transpose(0, 2, 1)
        out = self.epsilon * (weights @ v) + tokens
        return out.transpose(0, 2, 1).reshape(n, c, h, w)


class ChannelAttention(nn.Module):
    """Self-attention across channels (tokens = channels, features = pixels),
    gated like SpatialAttention so it initializes to the identity."""

    def __init__(self, channels: int, *, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.epsilon = nn.Parameter(np.zeros(1, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = x.reshape(n, c, h * w)
        weights = T.softmax((tokens @ tokens.transpose(0, 2, 1)) * (1.0 / np.sqrt(h * w)), axis=-1)
        out = self.epsilon * (weights @ tokens) + tokens
        return out.reshape(n, c, h, w)


class ConvGRUCell(nn.Module):
    """Convolutional GRU cell.

    r = sigmoid(BN(War*a) + BN(Whr*h) + br)
    z = sigmoid(BN(Waz*a) + BN(Whz*h) + bz)
    htilde = tanh(BN(Wah*a) + BN(Whh*(r h)) + bh)
    h' = (1 - z) h + z htilde

    All convolutions are bias-free (the gate biases are separate terms) and
    every BN supports identity mode so the recurrence can be checked by hand.
    """

    def __init__(self, c_in: int, c_h: int, kernel: int = 3, *, rng, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_h = c_in, c_h
        pad = kernel // 2
        for gate in ("r", "z", "h"):
            setattr(self, f"w_a{gate}", nn.Conv2d(c_in, c_h, kernel, padding=pad, bias=False, rng=rng, dtype=dtype))
            setattr(self, f"w_h{gate}", nn.Conv2d(c_h, c_h, kernel, padding=pad, bias=False, rng=rng, dtype=dtype))
            setattr(self, f"bn_a{gate}", nn.BatchNorm2d(c_h, dtype=dtype))
            setattr(self, f"bn_h{gate}", nn.BatchNorm2d(c_h, dtype=dtype))
            setattr(self, f"b_{gate}", nn.Parameter(np.zeros(c_h, dtype=dtype)))

    def _bias(self, name: str) -> Tensor:
        return getattr(self, name).reshape(1, self.c_h, 1, 1)

    def step(self, a: Tensor, h_prev: Tensor, z_override: Tensor | None = None) -> Tensor:
        if a.shape[0] != h_prev.shape[0] or a.shape[-2:] != h_prev.shape[-2:] or h_prev.shape[1] != self.c_h:
            raise ValueError(f"hidden state shape {h_prev.shape} incompatible with input {a.shape}")
        r = T.sigmoid(self.bn_ar(self.w_ar(a)) + self.bn_hr(self.w_hr(h_prev)) + self._bias("b_r"))
        if z_override is None:
            z = T.sigmoid(self.bn_az(self.w_az(a)) + self.bn_hz(self.w_hz(h_prev)) + self._bias("b_z"))
        else:
            z = T.as_tensor(z_override)
        h_tilde = T.tanh(self.bn_ah(self.w_ah(a)) + self.bn_hh(self.w_hh(r * h_prev)) + self._bias("b_h"))
        return (1.0 - z) * h_prev + z * h_tilde

    forward = step

    def initial_state(self, batch: int, h: int, w: int, dtype=None) -> Tensor:
        dtype = dtype or self.b_r.dtype
        return Tensor(np.zeros((batch, self.c_h, h, w), dtype=dtype))


def conv_gru_forward(cell: ConvGRUCell, a_seq: Tensor, h0: Tensor | None = None) -> Tensor:
    """Run the cell over a (B, T, C, h, w) sequence; returns all hidden states."""
    b, t = a_seq.shape[0], a_seq.shape[1]
    if t == 0:
        raise ValueError("sequence length must be at least 1")
    h = h0 if h0 is not None else cell.initial_state(b, a_seq.shape[-2], a_seq.shape[-1], a_seq.dtype)
    states = []
    for i in range(t):
        h = cell.step(a_seq[:, i], h)
        states.append(h)
    return T.stack(states, axis=1)


class SaliencyDecoder(nn.Module):
    """Decode GRU states back to input-resolution attention maps.

    Block order: 1x1 channel enrichment, upsample-align + residual skip from
    the encoder's reduced features, spatial attention, an inverted residual
    with 2x upsampling, an enrichment inverted residual, a second 2x
    upsampling inverted residual, channel self-attention, a final
    channel-reducing inverted residual, nearest-neighbor upsample to the
    frame size, sigmoid. Channel taper: c_h -> c_post -> c_post/2 -> c_post/4
    -> 1 (expansion inside the blocks peaks at 2*c_post).
    """

    def __init__(self, cfg: SaliencyConfig, *, rng, dtype=np.float32):
        super().__init__()
        cp = cfg.c_post
        if cp % 4:
            raise ValueError(f"c_post={cp} must divide by 4 for the decoder taper")
        self.enrich_conv = nn.Conv2d(cfg.c_h, cp, 1, bias=False, rng=rng, dtype=dtype)
        self.enrich_bn = nn.BatchNorm2d(cp, dtype=dtype)
        self.attn = SpatialAttention(cp, rng=rng, dtype=dtype)
        self.irb_up1 = nn.InvertedResidual(cp, cp // 2, expand=2, rng=rng, dtype=dtype)
        self.irb_enrich = nn.InvertedResidual(cp // 2, cp // 2, expand=2, rng=rng, dtype=dtype)
        self.irb_up2 = nn.InvertedResidual(cp // 2, cp // 4, expand=2, rng=rng, dtype=dtype)
        self.channel_attn = ChannelAttention(cp // 4, dtype=dtype)
        self.irb_out = nn.InvertedResidual(cp // 4, 1, expand=2, rng=rng, dtype=dtype)

    def forward(self, hidden: Tensor, skip_p: Tensor, out_hw: tuple) -> Tensor:
        """hidden: (N, c_h, h, w); skip_p: (N, c_post, h', w'); returns (N, 1, H, W)."""
        if hidden.shape[-2:] != skip_p.shape[-2:]:
            hs, ss = hidden.shape[-1], skip_p.shape[-1]
            if ss % hs:
                raise ValueError(f"cannot align decoder grid {hidden.shape[-2:]} to skip {skip_p.shape[-2:]}")
            hidden = T.upsample_nearest2d(hidden, ss // hs)
        x = T.relu(self.enrich_bn(self.enrich_conv(hidden)))
        x = x + skip_p
        x = self.attn(x)
        x = T.upsample_nearest2d(self.irb_up1(x), 2)
        x = self.irb_enrich(x)
        x = T.upsample_nearest2d(self.irb_up2(x), 2)
        x = self.channel_attn(x)
        x = self.irb_out(x)
        height, width = out_hw
        if height % x.shape[-2] or width % x.shape[-1]:
            raise ValueError(f"decoder grid {x.shape[-2:]} does not divide target {out_hw}")
        x = T.upsample_nearest2d(x, height // x.shape[-2])
        return T.sigmoid(x)


class SaliencyPredictor(nn.Module):
    """Full frame-sequence to attention-sequence model."""

    def __init__(self, cfg: SaliencyConfig = TINY_SALIENCY, *, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.encoder = FrameEncoder(cfg, rng=rng, dtype=dtype)
        self.attn = SpatialAttention(cfg.c_post, rng=rng, dtype=dtype)
        self.pre_gru = nn.InvertedResidual(cfg.c_post, cfg.c_post, expand=2, rng=rng, dtype=dtype)
        self.gru = ConvGRUCell(cfg.c_post, cfg.c_h, cfg.gru_kernel, rng=rng, dtype=dtype)
        self.decoder = SaliencyDecoder(cfg, rng=rng, dtype=dtype)

    def forward(self, frames: Tensor) -> Tensor:
        """frames: (B, T, 3, H, W) -> attention maps (B, T, 1, H, W) in [0, 1]."""
        b, t, c, height, width = frames.shape
        flat = frames.reshape(b * t, c, height, width)
        feats = self.encoder(flat)
        a = self.attn(feats.p)
        a = self.pre_gru(a)
        gh, gw = a.shape[-2], a.shape[-1]
        hidden = conv_gru_forward(self.gru, a.reshape(b, t, self.cfg.c_post, gh, gw))
        hidden_flat = hidden.reshape(b * t, self.cfg.c_h, gh, gw)
        maps = self.decoder(hidden_flat, feats.p, (height, width))
        return maps.reshape(b, t, 1, height, width)


# -- sequence-level functional entry points ------------------------------------


def encode_frames(frames: Tensor, encoder: FrameEncoder) -> EncoderFeatures:
    """(T, 3, H, W) frame sequence -> per-frame encoder features."""
    return encoder(T.as_tensor(frames))


def spatial_attention(x: Tensor, attn: SpatialAttention) -> Tensor:
    return attn(T.as_tensor(x))


def conv_gru_step(a: Tensor, h_prev: Tensor, cell: ConvGRUCell, z_override=None) -> Tensor:
    """Single-item step: a (C_in, h, w), h_prev (C_h, h, w)."""
    a = T.as_tensor(a)
    h_prev = T.as_tensor(h_prev)
    out = cell.step(a.reshape(1, *a.shape), h_prev.reshape(1, *h_prev.shape), z_override)
    return out.reshape(*out.shape[1:])


def decode_saliency(hidden_seq: Tensor, skip: EncoderFeatures, decoder: SaliencyDecoder, out_hw: tuple) -> Tensor:
    """(T, c_h, h, w) hidden states + skip features -> (T, 1, H, W) maps."""
    return decoder(T.as_tensor(hidden_seq), skip.p, out_hw)


def predict_attention(frames: Tensor, model: SaliencyPredictor) -> Tensor:
    """(T, 3, H, W) -> (T, 1, H, W), values in [0, 1]."""
    frames = T.as_tensor(frames)
    _validate_frames(frames.data)
    t, c, height, width = frames.shape
    out = model(frames.reshape(1, t, c, height, width))
    return out.reshape(t, 1, height, width)
