"""The temporal encoder squeezes a length-T sequence into one image-shaped
feature. In bypass mode (identity feed-forward, uniform squeeze) a sequence
that repeats the same frame comes back unchanged; trained weights instead
learn a recency profile, which demo shows via permutation sensitivity.
"""

import numpy as np

from driversight import TemporalEncoder, Tensor, temporal_encode

rng = np.random.default_rng(5)

print("-- bypass mode: constant-in-time sequence --")
enc = TemporalEncoder(4, rng=np.random.default_rng(0), bypass=True, dtype=np.float64)
frame = rng.random((3, 16, 16))
constant = np.broadcast_to(frame, (4, 3, 16, 16)).copy()
out = temporal_encode(Tensor(constant), enc)
print(f"  input (T,3,H,W) = {constant.shape} -> output {out.shape}")
print(f"  max |output - frame| = {np.abs(out.data - frame).max():.2e} (identity up to rounding)")

print("\n-- non-uniform squeeze weights react to frame order --")
enc2 = TemporalEncoder(4, rng=np.random.default_rng(1), dtype=np.float64)
enc2.bn.identity_mode = True
enc2.squeeze.weight.data = np.array([[0.1], [0.1], [0.2], [0.6]])  # recency-weighted
moving = rng.random((4, 3, 16, 16))
fwd = temporal_encode(Tensor(moving), enc2).data
rev = temporal_encode(Tensor(moving[::-1].copy()), enc2).data
print(f"  forward vs reversed frame order: max difference {np.abs(fwd - rev).max():.4f}")
print("  (a plain mean would be permutation-invariant; the learned squeeze is not)")
