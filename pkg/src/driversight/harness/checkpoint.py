"""Portable parameter container: a JSON manifest (names, shapes, offsets,
config snapshot, format version) followed by raw little-endian float32 arrays.
Round trips are bit-exact; loading into an incompatible model fails with a
full name/shape diff.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_pairs, FIELD_TO_KEY

MAGIC = b"DSCKPT01"
FORMAT_VERSION = 1


def _config_pairs(cfg: ExperimentConfig) -> dict[str, str]:
    out = {}
    for field_name, key in FIELD_TO_KEY.items():
        value = getattr(cfg, field_name)
        if isinstance(value, bool):
            out[key] = "true" if value else "false"
        elif isinstance(value, float):
            out[key] = repr(value)
        else:
            out[key] = str(value)
    return out


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: ExperimentConfig, meta: dict | None = None) -> Path:
    """Write arrays (cast to little-endian float32) plus config/meta."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": _config_pairs(config),
        "meta": meta or {},
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path):
    """Returns (arrays, config, meta)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise ValueError(f"'{path}' is not a checkpoint (bad magic)")
    hlen = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {header.get('format_version')}")
    data_start = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = data_start + entry["offset"]
        raw = blob[start : start + entry["nbytes"]]
        if len(raw) != int(np.prod(entry["shape"])) * 4:
            raise ValueError(f"checkpoint array '{entry['name']}' truncated")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
    config = config_from_pairs(header["config"])
    return arrays, config, header.get("meta", {})


def diff_against_model(arrays: dict[str, np.ndarray], model_state: dict[str, np.ndarray]) -> list[str]:
    """Name/shape differences between checkpoint arrays and a model state."""
    problems = []
    for name, arr in model_state.items():
        if name not in arrays:
            problems.append(f"missing from checkpoint: {name} {tuple(arr.shape)}")
        elif tuple(arrays[name].shape) != tuple(arr.shape):
            problems.append(
                f"shape mismatch: {name} checkpoint {tuple(arrays[name].shape)} vs model {tuple(arr.shape)}"
            )
    for name in arrays:
        if name not in model_state and not name.startswith(("adam.", "sgd.")):
            problems.append(f"unexpected in checkpoint: {name} {tuple(arrays[name].shape)}")
    return problems


def split_model_and_optimizer(arrays: dict[str, np.ndarray]):
    model = {k: v for k, v in arrays.items() if not k.startswith(("adam.", "sgd."))}
    opt = {k: v for k, v in arrays.items() if k.startswith(("adam.", "sgd."))}
    return model, opt
