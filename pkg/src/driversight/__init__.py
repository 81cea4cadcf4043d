"""driversight: driver-behavior prediction from dashcam frame sequences.

A numpy library implementing the full pipeline: per-frame driver-attention
(saliency) prediction with a convolutional-GRU encoder-decoder, two
attention/frame fusion strategies, a learned temporal squeeze, a residual
CNN behavior head, cost-sensitive training for imbalanced responses, and
skew-aware evaluation metrics, plus an experiment harness with a synthetic
scenario generator and an ablation grid.
"""

from .classifier import BehaviorClassifier, BehaviorLabel, classify, predict_label
from .data import (
    DEFAULT_RATIOS,
    LabeledSequence,
    ScenarioSpec,
    generate_dataset,
    load_manifest,
    preprocess,
    write_dataset,
)
from .fusion import CrossAttentionFusion, blend_fuse, channel_extend, cross_attention_fuse
from .objectives import (
    CostMatrix,
    MetricReport,
    confusion,
    cost_sensitive_loss,
    cost_sensitive_loss_from_logits,
    default_cost_matrix,
    metric_report,
    uniform_cost_matrix,
)
from .pipeline import BehaviorPredictor, PipelineSpec, backbone_names, build_backbone, register_backbone
from .saliency import (
    ConvGRUCell,
    FrameEncoder,
    SaliencyDecoder,
    SaliencyPredictor,
    SpatialAttention,
    conv_gru_forward,
    conv_gru_step,
    decode_saliency,
    encode_frames,
    predict_attention,
    spatial_attention,
)
from .temporal import TemporalEncoder, temporal_encode
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BehaviorClassifier",
    "BehaviorLabel",
    "BehaviorPredictor",
    "ConvGRUCell",
    "CostMatrix",
    "CrossAttentionFusion",
    "DEFAULT_RATIOS",
    "FrameEncoder",
    "LabeledSequence",
    "MetricReport",
    "PipelineSpec",
    "SaliencyDecoder",
    "SaliencyPredictor",
    "ScenarioSpec",
    "SpatialAttention",
    "TemporalEncoder",
    "Tensor",
    "backbone_names",
    "blend_fuse",
    "build_backbone",
    "channel_extend",
    "classify",
    "confusion",
    "conv_gru_forward",
    "conv_gru_step",
    "cost_sensitive_loss",
    "cost_sensitive_loss_from_logits",
    "cross_attention_fuse",
    "decode_saliency",
    "default_cost_matrix",
    "encode_frames",
    "generate_dataset",
    "load_manifest",
    "metric_report",
    "no_grad",
    "predict_attention",
    "predict_label",
    "preprocess",
    "register_backbone",
    "spatial_attention",
    "temporal_encode",
    "uniform_cost_matrix",
    "write_dataset",
]
