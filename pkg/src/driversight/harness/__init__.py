"""Experiment harness: configuration, checkpoints, training phases,
evaluation, the ablation grid, benchmarking, overlays, and the CLI."""

from .config import ExperimentConfig, load_config
from .checkpoint import load_checkpoint, save_checkpoint
from .training import build_model, evaluate_model, prepare_data, pretrain_da, train
