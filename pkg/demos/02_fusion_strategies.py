"""Compare the two attention/frame fusion strategies on the same sequence.

The blend variant is a per-pixel convex combination; the cross-attention
variant projects pixels to tokens, lets the attention stream query the frame
stream, and projects back. Both return a sequence shaped like the input.
"""

import numpy as np

from driversight import (
    CrossAttentionFusion,
    Tensor,
    blend_fuse,
    channel_extend,
    cross_attention_fuse,
    generate_dataset,
)

rng = np.random.default_rng(3)
seq = generate_dataset(1, class_ratios=(1.0, 0.0, 0.0), image_size=32, t_len=4, seed=11)[0]
frames = Tensor(seq.frames)
attn3 = channel_extend(Tensor(seq.attention_gt))
print(f"frames {frames.shape}, extended attention {attn3.shape}")

print("\n-- blend fusion --")
for alpha in (0.0, 0.5, 1.0):
    fused = blend_fuse(frames, attn3, alpha)
    dev = np.abs(fused.data - frames.data).max()
    print(f"  alpha={alpha}: fused range [{fused.data.min():.3f}, {fused.data.max():.3f}], "
          f"max deviation from frames {dev:.3f}")
print("  (alpha=0 reproduces the frames exactly; alpha=1 shows pure attention)")

print("\n-- cross-attention fusion --")
fuser = CrossAttentionFusion(token_dim=64, rng=rng)
fused = cross_attention_fuse(frames, attn3, fuser)
print(f"  fused shape {fused.shape} (matches the input)")

rows = fuser.attention_rows(
    Tensor(seq.frames[:1].reshape(1, 3, 32 * 32).transpose(0, 2, 1)),
    Tensor(seq.attention_gt[:1].repeat(3, axis=1).reshape(1, 3, 32 * 32).transpose(0, 2, 1)),
)
print(f"  token attention matrix {rows.shape}; row sums ~ {rows.data.sum(-1).mean():.6f}")
