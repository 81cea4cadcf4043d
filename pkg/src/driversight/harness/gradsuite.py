"""Finite-difference verification suite covering every differentiable
operation: spatial attention, the recurrent step, the decoder, cross-attention
fusion, temporal encoding, classification, and the cost-sensitive loss.

Instances are built in float64 at micro sizes so central differences are
trustworthy; each op is checked over several seeded instances against a
relative-error budget.
"""

from __future__ import annotations

import numpy as np

from ..classifier import BehaviorClassifier, ClassifierConfig
from ..fusion import CrossAttentionFusion
from ..gradcheck import check_gradients, max_error
from ..objectives import cost_sensitive_loss, default_cost_matrix
from ..saliency import ConvGRUCell, SaliencyConfig, SaliencyDecoder, SpatialAttention
from ..temporal import TemporalEncoder
from ..tensor import Tensor
from .. import tensor as T

MICRO_SALIENCY = SaliencyConfig(
    stem=4, stages=[(2, 4, 1, 2), (2, 4, 1, 2), (2, 6, 1, 2), (2, 8, 1, 2)], c_enc=12, c_post=4, c_h=2
)
MICRO_CLASSIFIER = ClassifierConfig(stem_channels=4, stem_kernel=3, stem_stride=1, stages=[(2, 4, 1, 1)], mlp_hidden=8)

DEFAULT_TOLERANCE = 1e-5


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _wrt(module, extra):
    return [(n, p) for n, p in module.named_parameters()] + extra


def check_spatial_attention(seed: int) -> float:
    rng = np.random.default_rng(seed)
    attn = SpatialAttention(3, rng=rng, dtype=np.float64)
    attn.epsilon.data = rng.standard_normal(1)  # move off the identity init
    x = _leaf(rng, 2, 3, 2, 2)
    target = rng.standard_normal((2, 3, 2, 2))
    loss = lambda: ((attn(x) - target) ** 2).mean()
    return max_error(check_gradients(loss, _wrt(attn, [("input", x)])))


def check_conv_gru_step(seed: int) -> float:
    rng = np.random.default_rng(seed)
    cell = ConvGRUCell(2, 2, rng=rng, dtype=np.float64)
    a = _leaf(rng, 2, 2, 3, 3)
    h = _leaf(rng, 2, 2, 3, 3)
    target = rng.standard_normal((2, 2, 3, 3))
    loss = lambda: ((cell.step(a, h) - target) ** 2).mean()
    return max_error(check_gradients(loss, _wrt(cell, [("a", a), ("h_prev", h)])))


def check_decode_saliency(seed: int) -> float:
    rng = np.random.default_rng(seed)
    dec = SaliencyDecoder(MICRO_SALIENCY, rng=rng, dtype=np.float64)
    hidden = _leaf(rng, 2, 2, 2, 2)
    skip = _leaf(rng, 2, 4, 2, 2)
    target = rng.random((2, 1, 16, 16))
    loss = lambda: ((dec(hidden, skip, (16, 16)) - target) ** 2).mean()
    return max_error(check_gradients(loss, _wrt(dec, [("hidden", hidden), ("skip", skip)])))


def check_cross_attention_fuse(seed: int) -> float:
    rng = np.random.default_rng(seed)
    mod = CrossAttentionFusion(3, rng=rng, dtype=np.float64)
    frames = _leaf(rng, 1, 2, 3, 2, 2)
    attn = _leaf(rng, 1, 2, 3, 2, 2)
    target = rng.standard_normal((1, 2, 3, 2, 2))
    loss = lambda: ((mod(frames, attn) - target) ** 2).mean()
    return max_error(check_gradients(loss, _wrt(mod, [("frames", frames), ("attention", attn)])))


def check_temporal_encode(seed: int) -> float:
    rng = np.random.default_rng(seed)
    enc = TemporalEncoder(2, hidden_factor=2, rng=rng, dtype=np.float64, identity_init=False)
    fused = _leaf(rng, 2, 2, 3, 2, 2)
    target = rng.standard_normal((2, 3, 2, 2))
    loss = lambda: ((enc(fused) - target) ** 2).mean()
    return max_error(check_gradients(loss, _wrt(enc, [("fused", fused)])))


def check_classify(seed: int) -> float:
    rng = np.random.default_rng(seed)
    model = BehaviorClassifier(MICRO_CLASSIFIER, rng=rng, dtype=np.float64)
    x = Tensor(rng.random((2, 3, 8, 8)), requires_grad=True)
    target = rng.standard_normal((2, 3))
    loss = lambda: ((model(x) - target) ** 2).mean()
    return max_error(check_gradients(loss, _wrt(model, [("input", x)])))


def check_cost_sensitive_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    raw = _leaf(rng, 4, 3)
    costs = default_cost_matrix(rng.integers(1, 50, size=3))
    truths = rng.integers(0, 3, size=4)
    loss = lambda: cost_sensitive_loss(T.softmax(raw, axis=-1), truths, costs)
    return max_error(check_gradients(loss, [("probability_logits", raw)]))


SUITE = {
    "spatial_attention": check_spatial_attention,
    "conv_gru_step": check_conv_gru_step,
    "decode_saliency": check_decode_saliency,
    "cross_attention_fuse": check_cross_attention_fuse,
    "temporal_encode": check_temporal_encode,
    "classify": check_classify,
    "cost_sensitive_loss": check_cost_sensitive_loss,
}


def run_gradient_suite(n_seeds: int = 10, tolerance: float = DEFAULT_TOLERANCE) -> dict[str, float]:
    """Worst relative error per op over `n_seeds` instances."""
    results = {}
    for name, fn in SUITE.items():
        results[name] = max(fn(seed) for seed in range(n_seeds))
    return results
