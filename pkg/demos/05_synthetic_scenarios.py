"""Tour of the synthetic safety-critical scenario generator.

Hazards move; the parked distractors drawn from the same appearance
distribution do not. A single frame therefore does not identify the hazard;
the motion history (or the attention map) does. The script renders a contact
sheet and writes a small dataset with its manifest.
"""

from pathlib import Path

import numpy as np

from driversight import generate_dataset, load_manifest, write_dataset
from driversight.data import derive_label_from_trajectory
from driversight.harness.overlays import emit_overlays

sequences = generate_dataset(60, image_size=32, t_len=4, seed=42)
labels = np.bincount([int(s.label) for s in sequences], minlength=3)
print(f"generated 60 sequences; class counts (brake, turn_right, turn_left) = {tuple(labels)}")

print("\nfirst three scenarios:")
for seq in sequences[:3]:
    drift = seq.trajectory[-1, 0] - seq.trajectory[0, 0]
    rederived = derive_label_from_trajectory(seq.trajectory[:, 0])
    print(f"  {seq.meta.hazard_kind:13s} drift {drift:+.1f}px size {seq.meta.hazard_size:.2f} "
          f"-> label {seq.label.name} (re-derived: {rederived.name})")

print("\nrendering a contact sheet (rows = scenes, columns = time) with the GT bumps...")
frames = np.stack([s.frames for s in sequences[:4]])
maps = np.stack([s.attention_gt for s in sequences[:4]])
emit_overlays(frames, maps, "demo05_scenarios.png")
print("  wrote demo05_scenarios.png")

out = Path("demo05_dataset")
manifest_path = write_dataset(sequences, out)
manifest = load_manifest(manifest_path)
print(f"\nwrote dataset under {out}/ with manifest {manifest_path}")
print(f"  records: {len(manifest.records)}; splits: {manifest.splits_present()}")
print("  record format: id|label|split|frame paths|attention paths")
