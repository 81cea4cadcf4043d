"""Command-line harness.

Subcommands: synth, pretrain-da, train, eval, ablate, bench, overlays, check.
Any config key can be overridden with --key=value; the STDA_SEED environment
variable overrides the seed. Errors exit nonzero after printing one
machine-parsable line: ``error code=<code> message="..."``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..data import generate_dataset, write_dataset
from ..pipeline import backbone_names
from ..tensor import Tensor
from .ablation import ablate
from .bench import bench_throughput
from .config import KEYMAP, ExperimentConfig, config_to_text, load_config
from .gradsuite import DEFAULT_TOLERANCE, run_gradient_suite
from .overlays import DEFAULT_BETA, emit_overlays
from .training import (
    build_model,
    evaluate_model,
    load_model_from_checkpoint,
    prepare_data,
    pretrain_da,
    train,
)


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _error_code(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, FileNotFoundError):
        return "missing_file"
    if isinstance(exc, KeyError):
        return "unknown_backbone"
    if isinstance(exc, MemoryError):
        return "out_of_memory"
    if isinstance(exc, PermissionError):
        return "unwritable_output"
    if isinstance(exc, ValueError):
        msg = str(exc)
        if "checkpoint" in msg:
            return "checkpoint_mismatch"
        if "config" in msg or "unknown config key" in msg:
            return "invalid_config"
        if "manifest" in msg or "missing frame" in msg:
            return "invalid_manifest"
        return "invalid_input"
    if isinstance(exc, OSError):
        return "io_error"
    return "internal_error"


def _split_overrides(extras: list[str]) -> dict[str, str]:
    overrides = {}
    for item in extras:
        if not item.startswith("--") or "=" not in item:
            raise CliError("invalid_config", f"unrecognized argument '{item}' (expected --key=value)")
        key, _, value = item[2:].partition("=")
        if key not in KEYMAP:
            raise CliError("invalid_config", f"unknown config key '{key}'")
        overrides[key] = value
    return overrides


def _config_from(args, extras) -> ExperimentConfig:
    return load_config(args.config, _split_overrides(extras))


def cmd_synth(args, extras) -> int:
    cfg = _config_from(args, extras)
    seqs = generate_dataset(
        cfg.synth_n,
        cfg.synth_ratios(),
        image_size=cfg.image_size,
        t_len=cfg.t_len,
        seed=cfg.seed,
        noise_level=cfg.synth_noise,
    )
    manifest = write_dataset(seqs, args.out, seed=cfg.seed)
    print(f"wrote {len(seqs)} sequences; manifest: {manifest}")
    return 0


def cmd_pretrain_da(args, extras) -> int:
    cfg = _config_from(args, extras)
    out = args.out or Path(cfg.out_dir) / "da_pretrain.ckpt"
    path, history = pretrain_da(cfg, out_path=out)
    print(f"checkpoint: {path}")
    for epoch, loss in enumerate(history):
        print(f"epoch {epoch}: loss={loss:.6f}")
    return 0


def cmd_train(args, extras) -> int:
    cfg = _config_from(args, extras)
    out = args.out or Path(cfg.out_dir) / "train.ckpt"
    path, history = train(cfg, warm_start=args.warm_start, out_path=out)
    print(f"checkpoint: {path}")
    for row in history:
        print(
            f"epoch {row['epoch']}: loss={row['train_loss']:.6f} "
            f"val_g_mean={row['val_g_mean']:.4f} val_iba={row['val_iba']:.4f}"
        )
    return 0


def cmd_eval(args, extras) -> int:
    model, cfg, _ = load_model_from_checkpoint(args.checkpoint)
    overrides = _split_overrides(extras)
    if overrides:
        from .config import apply_overrides

        apply_overrides(cfg, overrides)
    data = prepare_data(cfg)
    report, matrix = evaluate_model(model, data, args.split, iba_alpha=cfg.iba_alpha)
    for line in report.as_lines():
        print(line)
    print("confusion_matrix=" + json.dumps(matrix.tolist()))
    if args.report:
        out = Path(args.report)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(report.as_lines()) + "\n")
        out.with_suffix(".json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
        print(f"report: {out}")
    return 0


def cmd_ablate(args, extras) -> int:
    cfg = _config_from(args, extras)
    backbones = args.backbones.split(",") if args.backbones else ["residual_head"]
    cells, table, csv_text = ablate(cfg, backbones)
    print(table)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation_table.txt").write_text(table + "\n")
    (out_dir / "ablation_table.csv").write_text(csv_text)
    print(f"table: {out_dir / 'ablation_table.txt'}")
    return 0


def cmd_bench(args, extras) -> int:
    if args.checkpoint:
        model, cfg, _ = load_model_from_checkpoint(args.checkpoint)
    else:
        cfg = _config_from(args, extras)
        model = build_model(cfg)
    report = bench_throughput(model, batch=args.batch, n_iter=args.iters, seed=cfg.seed)
    for line in report.as_lines():
        print(line)
    return 0 if report.error is None else 1


def cmd_overlays(args, extras) -> int:
    model, cfg, _ = load_model_from_checkpoint(args.checkpoint)
    data = prepare_data(cfg)
    split = args.split
    if split not in data.frames:
        raise CliError("invalid_input", f"split '{split}' absent")
    frames = data.frames[split][: args.count]
    model.eval()
    with T.no_grad():
        maps = model.predict_maps(Tensor(frames)).data
    out = emit_overlays(frames, maps, Path(args.out) / "overlays.png", beta=args.beta)
    print(f"overlays: {out}")
    return 0


def cmd_check(args, extras) -> int:
    results = run_gradient_suite(n_seeds=args.seeds)
    ok = True
    for name, err in results.items():
        status = "PASS" if err < args.tolerance else "FAIL"
        ok &= err < args.tolerance
        print(f"{name}: max_rel_error={err:.3e} [{status}]")
    if not ok:
        raise CliError("gradient_check_failed", "one or more operations exceeded the tolerance")
    return 0


def cmd_show_config(args, extras) -> int:
    cfg = _config_from(args, extras)
    sys.stdout.write(config_to_text(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driversight",
        description="Driver-behavior prediction experiments: data synthesis, training, evaluation, ablation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key=value config file")
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic scenario dataset with manifest")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = add("pretrain-da", cmd_pretrain_da, "pretrain the attention predictor on ground-truth maps")
    p.add_argument("--out", default=None, help="checkpoint path")

    p = add("train", cmd_train, "train the full behavior model")
    p.add_argument("--out", default=None, help="checkpoint path")
    p.add_argument("--warm-start", default=None, help="attention pretrain or full checkpoint to start from")

    p = add("eval", cmd_eval, "evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--report", default=None, help="write the metric report here (txt + json)")

    p = add("ablate", cmd_ablate, "run the attention x temporal ablation grid")
    p.add_argument("--backbones", default=None, help=f"comma list from: {', '.join(backbone_names())}")

    p = add("bench", cmd_bench, "throughput / parameter-count / multiply-add report")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--iters", type=int, default=20)

    p = add("overlays", cmd_overlays, "render attention overlay grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--count", type=int, default=2)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)

    p = add("check", cmd_check, "finite-difference gradient verification suite")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)

    add("show-config", cmd_show_config, "print the resolved configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.fn(args, extras)
    except Exception as exc:  # single-line machine-parsable failure
        message = str(exc).replace('"', "'").replace("\n", " / ")
        print(f'error code={_error_code(exc)} message="{message}"', file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
