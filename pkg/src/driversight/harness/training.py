"""Training phases: saliency pretraining against ground-truth attention maps
(SGD with momentum, exponential learning-rate decay per epoch) and end-to-end
behavior training with the cost-sensitive loss (Adam). Both are deterministic
given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..data import apportion, generate_dataset, load_manifest, load_sequences
from ..objectives import (
    CostMatrix,
    confusion,
    cost_sensitive_loss_from_logits,
    default_cost_matrix,
    metric_report,
    uniform_cost_matrix,
    MetricReport,
)
from ..optim import SGD, Adam, exponential_lr
from ..pipeline import BehaviorPredictor, PipelineSpec
from ..saliency import PAPER_SALIENCY, TINY_SALIENCY, SaliencyPredictor
from ..tensor import Tensor
from .checkpoint import diff_against_model, load_checkpoint, save_checkpoint, split_model_and_optimizer
from .config import ExperimentConfig


@dataclass
class DatasetSplits:
    frames: dict[str, np.ndarray]  # split -> (N, T, 3, S, S)
    attention: dict[str, np.ndarray | None]
    labels: dict[str, np.ndarray]

    def class_counts(self, split: str = "train") -> np.ndarray:
        return np.bincount(self.labels[split], minlength=3)


def pipeline_spec_from_config(cfg: ExperimentConfig) -> PipelineSpec:
    return PipelineSpec(
        preset=cfg.preset,
        head_preset=cfg.head_preset,
        fusion_mode=cfg.fusion_mode,
        fusion_alpha=cfg.fusion_alpha,
        cross_downsample=cfg.fusion_token_downsample,
        da_enabled=cfg.da_enabled,
        temporal_enabled=cfg.temporal_enabled,
        t_len=cfg.t_len,
        image_size=cfg.image_size,
        temporal_hidden_factor=cfg.temporal_hidden_factor,
        backbone=cfg.backbone,
    )


def build_model(cfg: ExperimentConfig) -> BehaviorPredictor:
    rng = np.random.default_rng(cfg.seed)
    return BehaviorPredictor(pipeline_spec_from_config(cfg), rng=rng)


def _stratified_split(labels: np.ndarray, fractions=(0.65, 0.20, 0.15), seed: int = 0) -> np.ndarray:
    """Assign split ids 0/1/2 per sample, stratified by class."""
    rng = np.random.default_rng(seed)
    assignment = np.zeros(len(labels), dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        counts = apportion(len(idx), fractions)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for s, (a, b) in enumerate(zip(offsets[:-1], offsets[1:])):
            assignment[idx[a:b]] = s
    return assignment


def prepare_data(cfg: ExperimentConfig) -> DatasetSplits:
    """Manifest-backed data when configured, otherwise in-memory synthetic."""
    if cfg.data_manifest:
        manifest = load_manifest(cfg.data_manifest)
        frames, attention, labels = {}, {}, {}
        for split in manifest.splits_present():
            fr, at, lb = load_sequences(manifest, split, cfg.t_len, cfg.image_size)
            frames[split], attention[split], labels[split] = fr, at, lb
        return DatasetSplits(frames, attention, labels)

    seqs = generate_dataset(
        cfg.synth_n,
        cfg.synth_ratios(),
        image_size=cfg.image_size,
        t_len=cfg.t_len,
        seed=cfg.seed,
        noise_level=cfg.synth_noise,
    )
    frames_all = np.stack([s.frames for s in seqs])
    attn_all = np.stack([s.attention_gt for s in seqs])
    labels_all = np.array([int(s.label) for s in seqs], dtype=np.int64)
    assignment = _stratified_split(labels_all, seed=cfg.seed + 7919)
    names = ("train", "val", "test")
    frames = {name: frames_all[assignment == i] for i, name in enumerate(names)}
    attention = {name: attn_all[assignment == i] for i, name in enumerate(names)}
    labels = {name: labels_all[assignment == i] for i, name in enumerate(names)}
    return DatasetSplits(frames, attention, labels)


def cost_matrix_for(cfg: ExperimentConfig, data: DatasetSplits) -> CostMatrix:
    if cfg.cost_mode == "uniform":
        return uniform_cost_matrix(3)
    return default_cost_matrix(np.maximum(data.class_counts("train"), 1))


def _batches(n: int, batch_size: int, rng=None):
    order = np.arange(n)
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _bce(pred: Tensor, target: np.ndarray) -> Tensor:
    """Per-pixel binary cross-entropy with clamping away from {0, 1}."""
    eps = 1e-6
    p = pred * (1.0 - 2 * eps) + eps
    t = Tensor(target)
    return -(t * T.log(p) + (1.0 - t) * T.log(1.0 - p)).mean()


def pretrain_da(cfg: ExperimentConfig, data: DatasetSplits | None = None, out_path=None):
    """Train the saliency predictor against ground-truth maps; returns
    (checkpoint path, loss history)."""
    data = data if data is not None else prepare_data(cfg)
    if data.attention.get("train") is None:
        raise ValueError("attention ground truth missing; cannot pretrain the attention module")
    sal_cfg = PAPER_SALIENCY if cfg.preset == "paper" else TINY_SALIENCY
    model = SaliencyPredictor(sal_cfg, rng=np.random.default_rng(cfg.seed))
    optimizer = SGD(model.named_parameters(), lr=cfg.pretrain_lr, momentum=cfg.pretrain_momentum)
    frames = data.frames["train"]
    maps = data.attention["train"]
    history = []
    for epoch in range(cfg.pretrain_epochs):
        optimizer.lr = exponential_lr(cfg.pretrain_lr, cfg.pretrain_lr_decay, epoch)
        rng = np.random.default_rng(cfg.seed * 1_000_003 + epoch)
        losses = []
        for idx in _batches(len(frames), cfg.pretrain_batch, rng=rng):
            optimizer.zero_grad()
            pred = model(Tensor(frames[idx]))
            loss = _bce(pred, maps[idx])
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    out_path = out_path or Path(cfg.out_dir) / "da_pretrain.ckpt"
    arrays = dict(model.state_dict())
    arrays.update(optimizer.state_arrays())
    save_checkpoint(out_path, arrays, cfg, meta={"phase": "pretrain_da", "epochs": cfg.pretrain_epochs, "loss_history": history})
    return Path(out_path), history


def _forward_logits(model: BehaviorPredictor, frames: np.ndarray, batch: int = 64) -> np.ndarray:
    outs = []
    with T.no_grad():
        for start in range(0, len(frames), batch):
            outs.append(model(Tensor(frames[start : start + batch])).data)
    return np.concatenate(outs, axis=0)


def evaluate_model(model: BehaviorPredictor, data: DatasetSplits, split: str, iba_alpha: float = 0.1):
    """Deterministic split evaluation: (MetricReport, confusion matrix)."""
    if split not in data.frames:
        raise ValueError(f"split '{split}' absent (has: {sorted(data.frames)})")
    was_training = model.training
    model.eval()
    logits = _forward_logits(model, data.frames[split])
    model.train(was_training)
    preds = np.argmax(logits, axis=1)
    m = confusion(data.labels[split], preds, 3)
    return metric_report(m, iba_alpha=iba_alpha), m


def train(cfg: ExperimentConfig, data: DatasetSplits | None = None, warm_start=None, out_path=None):
    """End-to-end training; returns (checkpoint path, history rows).

    `warm_start` may be a saliency pretraining checkpoint (its arrays load
    into the attention module) or a full-model checkpoint saved by a previous
    `train` call (resume: model + optimizer state restored).
    """
    data = data if data is not None else prepare_data(cfg)
    model = build_model(cfg)
    costs = cost_matrix_for(cfg, data)

    start_epoch = 0
    opt_state = {}
    if warm_start is not None:
        arrays, ck_cfg, meta = load_checkpoint(warm_start)
        model_arrays, opt_state = split_model_and_optimizer(arrays)
        if meta.get("phase") == "pretrain_da":
            if model.saliency is None:
                raise ValueError("checkpoint is an attention pretrain but da.enabled is false")
            problems = diff_against_model(model_arrays, dict(model.saliency.state_dict()))
            if problems:
                raise ValueError("checkpoint incompatible:\n  " + "\n  ".join(problems))
            model.saliency.load_state_dict(model_arrays)
            opt_state = {}
        else:
            problems = diff_against_model(model_arrays, dict(model.state_dict()))
            if problems:
                raise ValueError("checkpoint incompatible:\n  " + "\n  ".join(problems))
            model.load_state_dict(model_arrays)
            start_epoch = int(meta.get("epochs_done", 0))

    if cfg.da_freeze and model.saliency is not None:
        for p in model.saliency.parameters():
            p.requires_grad = False

    trainable = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    optimizer = Adam(trainable, lr=cfg.train_lr)
    if opt_state:
        optimizer.load_state_arrays(opt_state)

    frames = data.frames["train"]
    labels = data.labels["train"]
    history = []
    for epoch in range(start_epoch, start_epoch + cfg.train_epochs):
        optimizer.lr = exponential_lr(cfg.train_lr, cfg.train_lr_decay, epoch)
        rng = np.random.default_rng(cfg.seed * 912_559 + epoch)
        losses = []
        for idx in _batches(len(frames), cfg.train_batch, rng=rng):
            optimizer.zero_grad()
            logits = model(Tensor(frames[idx]))
            loss = cost_sensitive_loss_from_logits(logits, labels[idx], costs)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        report, _ = evaluate_model(model, data, "val", iba_alpha=cfg.iba_alpha)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_g_mean": report.macro["g_mean"],
                "val_iba": report.macro["iba"],
            }
        )

    out_path = out_path or Path(cfg.out_dir) / "train.ckpt"
    arrays = dict(model.state_dict())
    arrays.update(optimizer.state_arrays())
    save_checkpoint(
        out_path,
        arrays,
        cfg,
        meta={"phase": "train", "epochs_done": start_epoch + cfg.train_epochs},
    )
    curve_path = Path(out_path).with_suffix(".losses.csv")
    lines = ["epoch,train_loss,val_g_mean,val_iba"]
    lines += [f"{h['epoch']},{h['train_loss']!r},{h['val_g_mean']!r},{h['val_iba']!r}" for h in history]
    curve_path.write_text("\n".join(lines) + "\n")
    return Path(out_path), history


def load_model_from_checkpoint(path) -> tuple[BehaviorPredictor, ExperimentConfig, dict]:
    arrays, cfg, meta = load_checkpoint(path)
    model_arrays, _ = split_model_and_optimizer(arrays)
    model = build_model(cfg)
    problems = diff_against_model(model_arrays, dict(model.state_dict()))
    if problems:
        raise ValueError("checkpoint incompatible:\n  " + "\n  ".join(problems))
    model.load_state_dict(model_arrays)
    return model, cfg, meta
