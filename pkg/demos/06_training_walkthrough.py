"""Small end-to-end training run: pretrain the attention module on its
ground-truth maps, warm-start the full model, train with the cost-sensitive
loss, and read the skew-aware evaluation.

Sized to finish in about two minutes on a laptop CPU; scale synth_n /
epochs up for the real experiment (see README and the acceptance suite).
"""

import time

from driversight.harness.config import ExperimentConfig
from driversight.harness.training import evaluate_model, load_model_from_checkpoint, prepare_data, pretrain_da, train

cfg = ExperimentConfig(
    synth_n=400,
    t_len=4,
    image_size=32,
    seed=0,
    pretrain_epochs=2,
    pretrain_batch=16,
    train_epochs=6,
    train_batch=16,
    train_lr=1.5e-3,
    cost_mode="default",
    out_dir="demo06_runs",
)

t0 = time.perf_counter()
print("preparing synthetic data...")
data = prepare_data(cfg)
print(f"  train/val/test sizes: {[len(data.labels[s]) for s in ('train', 'val', 'test')]}")
print(f"  train class counts: {data.class_counts('train')}")

print("\nphase 1: attention pretraining (SGD, momentum 0.9, lr decays x0.8/epoch)")
da_ckpt, losses = pretrain_da(cfg, data=data)
print("  per-epoch loss:", [round(l, 4) for l in losses])

print("\nphase 2: end-to-end behavior training (Adam, cost-sensitive loss)")
ckpt, history = train(cfg, data=data, warm_start=da_ckpt)
for row in history:
    print(f"  epoch {row['epoch']}: loss={row['train_loss']:.4f} val G-mean={row['val_g_mean']:.3f}")

model, _, _ = load_model_from_checkpoint(ckpt)
report, matrix = evaluate_model(model, data, "test")
print("\ntest-split report:")
print(f"  macro G-mean = {report.macro['g_mean']:.3f}, macro IBA = {report.macro['iba']:.3f}")
print(f"  per-class recall = {[round(r, 3) for r in report.per_class['recall']]}")
print(f"  confusion matrix:\n{matrix}")
print(f"\ntotal time: {time.perf_counter() - t0:.0f}s; checkpoint at {ckpt}")
