"""Attention overlay rendering: per-frame blend of the input frame with the
min-max-normalized, colormapped attention map, laid out as a grid PNG with
one row per scene and one column per timestep.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..data import save_png_rgb

DEFAULT_BETA = 0.4


def colormap_jet(values: np.ndarray) -> np.ndarray:
    """(H, W) in [0,1] -> (3, H, W) blue-to-red heat colors."""
    v = np.clip(values, 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return np.stack([r, g, b])


def minmax_normalize(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi - lo < 1e-12:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def overlay_frame(frame: np.ndarray, attention: np.ndarray, beta: float = DEFAULT_BETA) -> np.ndarray:
    """(3, H, W) frame + (H, W) map -> blended overlay, still float in [0,1].

    Written out as round(255 * ((1-beta) * frame + beta * colormap(attn))).
    """
    heat = colormap_jet(minmax_normalize(attention))
    return (1.0 - beta) * frame + beta * heat


def emit_overlays(frames: np.ndarray, maps: np.ndarray, out_path, beta: float = DEFAULT_BETA, pad: int = 2) -> Path:
    """frames (N, T, 3, H, W), maps (N, T, 1, H, W) -> one grid PNG."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n, t_len = frames.shape[0], frames.shape[1]
    h, w = frames.shape[-2], frames.shape[-1]
    grid = np.ones((3, n * h + pad * (n - 1), t_len * w + pad * (t_len - 1)), dtype=np.float64)
    for i in range(n):
        for t in range(t_len):
            tile = overlay_frame(frames[i, t], maps[i, t, 0], beta)
            y0 = i * (h + pad)
            x0 = t * (w + pad)
            grid[:, y0 : y0 + h, x0 : x0 + w] = tile
    save_png_rgb(out_path, grid)
    return out_path
