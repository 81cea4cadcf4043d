"""Predict per-frame driver attention on a synthetic scenario.

Walks the attention pipeline end to end on one sequence: encoder features,
the spatial-attention refinement, the recurrent pass, and the decoded maps,
then writes the maps next to the ground truth as PNGs.
"""

import numpy as np

from driversight import SaliencyPredictor, generate_dataset, no_grad, Tensor
from driversight.data import save_png_gray, save_png_rgb
from driversight.saliency import TINY_SALIENCY

rng = np.random.default_rng(0)

print("Generating one synthetic scenario (T=4 frames of 32x32)...")
sequence = generate_dataset(1, class_ratios=(0.0, 1.0, 0.0), image_size=32, t_len=4, seed=7)[0]
print(f"  hazard kind: {sequence.meta.hazard_kind}, label: {sequence.label.name}")
print(f"  frames: {sequence.frames.shape}, ground-truth maps: {sequence.attention_gt.shape}")

print("\nBuilding the tiny attention predictor (untrained weights)...")
model = SaliencyPredictor(TINY_SALIENCY, rng=rng)
model.eval()

frames = Tensor(sequence.frames[None])  # add the batch axis
with no_grad():
    feats = model.encoder(Tensor(sequence.frames))
    maps = model(frames).data[0]

print(f"  encoder backbone features: {feats.m.shape} (stride-32 grid)")
print(f"  reduced features:          {feats.p.shape}")
print(f"  predicted attention:       {maps.shape}, range [{maps.min():.3f}, {maps.max():.3f}]")

for t in range(4):
    save_png_rgb(f"demo01_frame_t{t}.png", sequence.frames[t])
    save_png_gray(f"demo01_pred_t{t}.png", maps[t])
    save_png_gray(f"demo01_gt_t{t}.png", sequence.attention_gt[t])
print("\nWrote demo01_frame_t*.png / demo01_pred_t*.png / demo01_gt_t*.png")
print("(untrained maps are near-uniform; see demo 06 for what training does)")
