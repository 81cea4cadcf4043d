"""Synthetic safety-critical scenarios, dataset manifests, and preprocessing.

Each generated sequence shows a simple first-person road scene: sky, road,
a few parked distractor vehicles, and exactly one hazard vehicle that moves.
The hazard kind fixes the behavior label (evade away from a cutting-in
vehicle, brake for a slowing lead vehicle):

    cut_in_left  -> TURN_RIGHT   (hazard drifts rightward toward the center)
    cut_in_right -> TURN_LEFT    (hazard drifts leftward toward the center)
    lead_brake   -> BRAKE        (hazard ahead grows, no lateral motion)

Distractors are drawn from the same size/brightness distribution as the
hazard and never move, so a single frame does not reveal which vehicle is
the hazard; the motion history (or a correct attention map) does. Attention
ground truth is an isotropic Gaussian bump, peak 1 at the hazard centroid,
sigma = hazard_size * image_size / 2, with trajectories margined so the
per-frame bump mass stays within 1% of the untruncated value.

Manifest format (line-delimited text, '|'-separated fields, '#' comments):

    sequence_id|label|split|frame1.png,frame2.png,...|attn1.png,... (or -)

Frame files are 8-bit RGB PNG; attention maps 8-bit grayscale PNG with
value = round(255 * p).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .classifier import BehaviorLabel

HAZARD_KINDS = ("lead_brake", "cut_in_left", "cut_in_right")
KIND_TO_LABEL = {
    "lead_brake": BehaviorLabel.BRAKE,
    "cut_in_left": BehaviorLabel.TURN_RIGHT,
    "cut_in_right": BehaviorLabel.TURN_LEFT,
}
LABEL_NAMES = {
    BehaviorLabel.BRAKE: "brake",
    BehaviorLabel.TURN_RIGHT: "turn_right",
    BehaviorLabel.TURN_LEFT: "turn_left",
}
NAME_TO_LABEL = {v: k for k, v in LABEL_NAMES.items()}
SPLITS = ("train", "val", "test")

# class shares of (brake, turn_right, turn_left) matching the observed
# 1730/319/264 response counts
DEFAULT_RATIOS = (1730 / 2313, 319 / 2313, 264 / 2313)

# smallest certifiable lateral travel: the label oracle thresholds |dx| at
# LABEL_DRIFT_THRESHOLD, and per-frame peak quantisation can eat 1px total
MIN_TRAVEL = 2.4
LABEL_DRIFT_THRESHOLD = 1.2


@dataclass(frozen=True)
class ScenarioSpec:
    hazard_kind: str
    hazard_speed: float  # lateral pixels per frame (expansion rate proxy for lead_brake)
    hazard_size: float  # fraction of the frame edge
    noise_level: float
    seed: int


@dataclass
class LabeledSequence:
    frames: np.ndarray  # (T, 3, S, S) float32 in [0, 1]
    attention_gt: np.ndarray  # (T, 1, S, S) float32 in [0, 1]
    label: BehaviorLabel
    meta: ScenarioSpec
    trajectory: np.ndarray  # (T, 2) hazard centroid (x, y) in pixels


def apportion(n: int, ratios) -> np.ndarray:
    """Largest-remainder rounding of n * ratios to integers summing to n."""
    ratios = np.asarray(ratios, dtype=np.float64)
    raw = n * ratios
    counts = np.floor(raw).astype(int)
    remainder = raw - counts
    for idx in np.argsort(-remainder)[: n - counts.sum()]:
        counts[idx] += 1
    return counts


def _draw_rect(img: np.ndarray, cx: float, cy: float, half_w: float, half_h: float, color) -> None:
    """Paint an antialiased axis-aligned rectangle onto (3, S, S)."""
    s = img.shape[-1]
    ys = np.arange(s, dtype=np.float64)
    cov_y = np.clip(np.minimum(ys + 1, cy + half_h) - np.maximum(ys, cy - half_h), 0.0, 1.0)
    cov_x = np.clip(np.minimum(ys + 1, cx + half_w) - np.maximum(ys, cx - half_w), 0.0, 1.0)
    cov = cov_y[:, None] * cov_x[None, :]
    for c in range(3):
        img[c] = img[c] * (1 - cov) + color[c] * cov


def _gaussian_bump(s: int, cx: float, cy: float, sigma: float) -> np.ndarray:
    xs = np.arange(s) + 0.5
    d2 = (xs[None, :] - cx) ** 2 + (xs[:, None] - cy) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _road_background(s: int, rng: np.random.Generator) -> np.ndarray:
    """Static scene: sky band, road, dashed center line."""
    img = np.empty((3, s, s), dtype=np.float64)
    horizon = int(0.40 * s)
    sky = 0.55 + rng.uniform(-0.05, 0.05)
    road = 0.30 + rng.uniform(-0.04, 0.04)
    img[:, :horizon, :] = sky
    img[:, horizon:, :] = road
    # dashed center line
    cx = s // 2
    for y0 in range(horizon + 2, s, 6):
        img[:, y0 : y0 + 2, cx - 1 : cx] = road + 0.18
    return img


def generate_sequence(spec: ScenarioSpec, image_size: int, t_len: int) -> LabeledSequence:
    """Render one scenario deterministically from its spec."""
    if t_len < 2:
        raise ValueError("labels are motion-derived; need t_len >= 2")
    s = image_size
    sigma = spec.hazard_size * s / 2.0
    half_w = 0.7 * spec.hazard_size * s
    half_h = 0.45 * spec.hazard_size * s
    margin = max(2.6 * sigma, half_w + 1.0)
    center = s / 2.0
    if margin + MIN_TRAVEL >= center - 1.0:
        raise ValueError(f"image size {s} too small for hazard size {spec.hazard_size}")

    rng = np.random.default_rng(spec.seed)
    travel = min(spec.hazard_speed * (t_len - 1), center - margin - 1.5)
    if spec.hazard_kind != "lead_brake" and travel < MIN_TRAVEL:
        raise ValueError(
            f"lateral travel {travel:.2f}px too small to certify a cut-in "
            f"(need >= {MIN_TRAVEL}px; raise hazard_speed or image size)"
        )

    if spec.hazard_kind == "cut_in_left":
        x_end = rng.uniform(margin + travel, center - 1.0)
        xs = np.linspace(x_end - travel, x_end, t_len)
    elif spec.hazard_kind == "cut_in_right":
        x_end = rng.uniform(center + 1.0, s - margin - travel)
        xs = np.linspace(x_end + travel, x_end, t_len)
    elif spec.hazard_kind == "lead_brake":
        # a slice of lead vehicles drifts laterally just under the label
        # threshold; their measured drift overlaps the marginal cut-ins',
        # which is what makes the brake/turn boundary genuinely contested
        x0 = center + rng.uniform(-0.05 * s, 0.05 * s)
        if rng.uniform() < 0.30:
            drift = rng.choice([-1.0, 1.0]) * rng.uniform(0.7, 1.05)
        else:
            drift = rng.uniform(-0.35, 0.35)
        xs = x0 + np.linspace(0.0, drift, t_len)
    else:
        raise ValueError(f"unknown hazard kind '{spec.hazard_kind}'")

    y_lo = max(0.55 * s, margin)
    y_hi = s - margin
    cy = rng.uniform(y_lo, y_hi)
    ys = np.full(t_len, cy)

    # approach is rendered as box growth; cut-ins may grow mildly too, so
    # growth alone does not separate the classes and lateral drift has to
    growth_cap = max(min(0.45, (margin - 1.0) / half_w - 1.0), 0.0)
    if spec.hazard_kind == "lead_brake":
        growth = rng.uniform(0.4, 1.0) * growth_cap / max(t_len - 1, 1)
    else:
        growth = rng.uniform(0.0, 0.4) * growth_cap / max(t_len - 1, 1)

    background = _road_background(s, rng)
    hazard_color = rng.uniform(0.60, 0.92, size=3)
    n_distractors = int(rng.integers(2, 4))
    distractors = []
    for _ in range(n_distractors):
        dx = rng.uniform(half_w + 1, s - half_w - 1)
        dy = rng.uniform(0.50 * s, s - half_h - 1)
        dcol = rng.uniform(0.60, 0.92, size=3)
        dscale = rng.uniform(0.8, 1.2)
        distractors.append((dx, dy, dscale, dcol))

    frames = np.empty((t_len, 3, s, s), dtype=np.float32)
    attention = np.empty((t_len, 1, s, s), dtype=np.float32)
    traj = np.stack([xs, ys], axis=1)
    for t in range(t_len):
        img = background.copy()
        for dx, dy, dscale, dcol in distractors:
            _draw_rect(img, dx, dy, half_w * dscale, half_h * dscale, dcol)
        scale = 1.0 + growth * t
        _draw_rect(img, xs[t], ys[t], half_w * scale, half_h * scale, hazard_color)
        if spec.noise_level > 0:
            img = img + rng.normal(0.0, spec.noise_level, size=img.shape)
        frames[t] = np.clip(img, 0.0, 1.0).astype(np.float32)
        attention[t, 0] = _gaussian_bump(s, xs[t], ys[t], sigma).astype(np.float32)

    return LabeledSequence(
        frames=frames,
        attention_gt=attention,
        label=KIND_TO_LABEL[spec.hazard_kind],
        meta=spec,
        trajectory=traj,
    )


def derive_label_from_trajectory(xs: np.ndarray, threshold: float = LABEL_DRIFT_THRESHOLD) -> BehaviorLabel:
    """Re-derive the behavior from hazard motion: lateral drift beyond the
    threshold means a cut-in (evade away); otherwise a lead-brake."""
    dx = float(xs[-1] - xs[0])
    if dx > threshold:
        return BehaviorLabel.TURN_RIGHT
    if dx < -threshold:
        return BehaviorLabel.TURN_LEFT
    return BehaviorLabel.BRAKE


def generate_dataset(
    n: int,
    class_ratios=DEFAULT_RATIOS,
    image_size: int = 32,
    t_len: int = 4,
    seed: int = 0,
    noise_level: float = 0.05,
) -> list[LabeledSequence]:
    """Generate n scenarios with class proportions within 1/n of the request.

    Deterministic: sequence i is rendered from a generator seeded with
    seed + i, and the kind order is a fixed shuffle of the apportioned
    counts, so equal seeds give bit-identical datasets.
    """
    ratios = np.asarray(class_ratios, dtype=np.float64)
    if ratios.shape != (3,):
        raise ValueError("need exactly 3 class ratios")
    if abs(ratios.sum() - 1.0) > 1e-6:
        raise ValueError(f"class ratios must sum to 1, got {ratios.sum():.8f}")
    if (ratios < 0).any():
        raise ValueError("class ratios must be nonnegative")
    counts = apportion(n, ratios)
    label_order = ("lead_brake", "cut_in_left", "cut_in_right")  # label ids 0, 1, 2
    kinds = [kind for kind, c in zip(label_order, counts) for _ in range(c)]
    master = np.random.default_rng(seed)
    master.shuffle(kinds)

    sequences = []
    for i, kind in enumerate(kinds):
        srng = np.random.default_rng(seed + i + 1)
        size = float(srng.uniform(0.12, 0.18))
        sigma = size * image_size / 2.0
        margin = max(2.6 * sigma, 0.7 * size * image_size + 1.0)
        travel_cap = image_size / 2.0 - margin - 1.5
        if travel_cap < MIN_TRAVEL:
            raise ValueError(f"image size {image_size} too small for hazard size {size:.3f}")
        # bimodal drift: most cut-ins move decisively, but a slice sits just
        # above the drift threshold where the class prior dominates; that
        # slice is what the cost-sensitive loss exists to recover
        if srng.uniform() < 0.72:
            travel = float(srng.uniform(0.55 * travel_cap, travel_cap))
        else:
            travel = float(srng.uniform(MIN_TRAVEL + 0.6, MIN_TRAVEL + 1.8))
        spec = ScenarioSpec(
            hazard_kind=kind,
            hazard_speed=travel / (t_len - 1),
            hazard_size=size,
            noise_level=noise_level,
            seed=seed + i + 1,
        )
        sequences.append(generate_sequence(spec, image_size, t_len))
    return sequences


# -- PNG round trip ---------------------------------------------------------------


def save_png_rgb(path, frame: np.ndarray) -> None:
    """(3, H, W) float in [0,1] -> 8-bit RGB PNG."""
    arr = np.round(255.0 * np.clip(frame, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def save_png_gray(path, attention_map: np.ndarray) -> None:
    """(H, W) or (1, H, W) float in [0,1] -> 8-bit grayscale PNG, v = round(255 p)."""
    arr = np.asarray(attention_map)
    if arr.ndim == 3:
        arr = arr[0]
    Image.fromarray(np.round(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8), mode="L").save(path)


def load_png(path) -> np.ndarray:
    """PNG -> float32 in [0,1]; RGB gives (3, H, W), grayscale (H, W)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except Exception as exc:
        raise ValueError(f"cannot decode image '{path}': {exc}") from exc
    out = arr.astype(np.float32) / 255.0
    if out.ndim == 3:
        return out[:, :, :3].transpose(2, 0, 1)
    return out


# -- manifest ------------------------------------------------------------------------


@dataclass
class ManifestRecord:
    sequence_id: str
    label: BehaviorLabel
    split: str
    frame_paths: list[str]
    attention_paths: list[str] | None


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    root: Path

    def split_records(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def splits_present(self) -> list[str]:
        return sorted({r.split for r in self.records})


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest; every referenced file must exist."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    text = path.read_text().splitlines()
    records = []
    seen_ids = set()
    for lineno, line in enumerate(text, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) != 5:
            raise ValueError(f"manifest record {lineno}: expected 5 '|'-separated fields, got {len(parts)}")
        seq_id, label_name, split, frames_field, attn_field = parts
        if seq_id in seen_ids:
            raise ValueError(f"manifest record {lineno}: duplicate sequence id '{seq_id}'")
        seen_ids.add(seq_id)
        if label_name not in NAME_TO_LABEL:
            raise ValueError(f"manifest record {lineno}: unknown label '{label_name}'")
        if split not in SPLITS:
            raise ValueError(f"manifest record {lineno}: unknown split '{split}'")
        frame_paths = [p for p in frames_field.split(",") if p]
        if not frame_paths:
            raise ValueError(f"manifest record {lineno}: no frame paths")
        for p in frame_paths:
            if not (root / p).exists():
                raise ValueError(f"manifest record {lineno}: missing frame file '{p}'")
        attention_paths = None
        if attn_field.strip() not in ("", "-"):
            attention_paths = [p for p in attn_field.split(",") if p]
            if len(attention_paths) != len(frame_paths):
                raise ValueError(f"manifest record {lineno}: {len(attention_paths)} attention maps for {len(frame_paths)} frames")
            for p in attention_paths:
                if not (root / p).exists():
                    raise ValueError(f"manifest record {lineno}: missing attention file '{p}'")
        records.append(ManifestRecord(seq_id, NAME_TO_LABEL[label_name], split, frame_paths, attention_paths))
    if not records:
        raise ValueError(f"manifest {path} contains no records")
    return DatasetManifest(records=records, root=root)


def write_dataset(sequences: list[LabeledSequence], out_dir, split_fractions=(0.7, 0.15, 0.15), seed: int = 0) -> Path:
    """Write PNG frames/attention maps plus manifest.txt; returns manifest path.

    Splits are stratified per class with the largest-remainder rule, then
    assigned by a seeded shuffle within each class.
    """
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    attn_dir = out_dir / "attention"
    frames_dir.mkdir(parents=True, exist_ok=True)
    attn_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    split_of = {}
    by_label: dict[int, list[int]] = {}
    for i, seq in enumerate(sequences):
        by_label.setdefault(int(seq.label), []).append(i)
    for _, indices in sorted(by_label.items()):
        indices = np.array(indices)
        rng.shuffle(indices)
        counts = apportion(len(indices), split_fractions)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for split, a, b in zip(SPLITS, offsets[:-1], offsets[1:]):
            for idx in indices[a:b]:
                split_of[int(idx)] = split

    lines = ["# driversight dataset manifest v1", "# id|label|split|frames|attention"]
    for i, seq in enumerate(sequences):
        seq_id = f"seq{i:06d}"
        fpaths, apaths = [], []
        for t in range(seq.frames.shape[0]):
            fp = f"frames/{seq_id}_t{t}.png"
            ap = f"attention/{seq_id}_t{t}.png"
            save_png_rgb(out_dir / fp, seq.frames[t])
            save_png_gray(out_dir / ap, seq.attention_gt[t])
            fpaths.append(fp)
            apaths.append(ap)
        lines.append(
            f"{seq_id}|{LABEL_NAMES[seq.label]}|{split_of[i]}|{','.join(fpaths)}|{','.join(apaths)}"
        )
    manifest_path = out_dir / "manifest.txt"
    manifest_path.write_text("\n".join(lines) + "\n")
    return manifest_path


# -- preprocessing ---------------------------------------------------------------------


def preprocess(images, target_size: int = 224) -> np.ndarray:
    """Center-crop each image to a square, resize, scale to [0, 1].

    `images`: iterable of paths, PIL images, or (H, W, 3) uint8 arrays.
    Returns (T, 3, target, target) float32.
    """
    out = []
    for item in images:
        if isinstance(item, (str, Path)):
            try:
                im = Image.open(item).convert("RGB")
            except Exception as exc:
                raise ValueError(f"cannot decode image '{item}': {exc}") from exc
        elif isinstance(item, Image.Image):
            im = item.convert("RGB")
        else:
            arr = np.asarray(item)
            if arr.dtype != np.uint8:
                arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
            im = Image.fromarray(arr, mode="RGB")
        w, h = im.size
        side = min(w, h)
        left = (w - side) // 2
        top = (h - side) // 2
        im = im.crop((left, top, left + side, top + side))
        if side != target_size:
            im = im.resize((target_size, target_size), Image.BILINEAR)
        out.append(np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0)
    return np.stack(out, axis=0)


def _resize_gray(arr: np.ndarray, size: int) -> np.ndarray:
    if arr.shape == (size, size):
        return arr
    im = Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L")
    return np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.float32) / 255.0


def load_sequences(manifest: DatasetManifest, split: str, t_len: int, image_size: int):
    """Materialize (frames, attention, label) arrays for a manifest split."""
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"split '{split}' absent from manifest (has: {manifest.splits_present()})")
    frames, attns, labels = [], [], []
    for rec in records:
        if len(rec.frame_paths) < t_len:
            raise ValueError(f"sequence '{rec.sequence_id}' has {len(rec.frame_paths)} frames, need >= {t_len}")
        fr = preprocess([manifest.root / p for p in rec.frame_paths[-t_len:]], image_size)
        frames.append(fr)
        if rec.attention_paths is not None:
            maps = [load_png(manifest.root / p) for p in rec.attention_paths[-t_len:]]
            maps = [m if m.ndim == 2 else m.mean(axis=0) for m in maps]
            am = np.stack([_resize_gray(m, image_size) for m in maps])[:, None, :, :]
            attns.append(am.astype(np.float32))
        else:
            attns.append(None)
        labels.append(int(rec.label))
    frame_arr = np.stack(frames)
    attn_arr = None if any(a is None for a in attns) else np.stack(attns)
    return frame_arr, attn_arr, np.array(labels, dtype=np.int64)
