"""The 2x2 attention-module x temporal-module ablation grid over pluggable
classifier backbones. Every cell trains with identical seeds; the table
reports G-mean, IBA, and the percentage G-mean increase over each backbone's
both-off baseline cell.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from ..pipeline import backbone_names
from .config import ExperimentConfig
from .training import evaluate_model, prepare_data, pretrain_da, train, load_model_from_checkpoint


@dataclass
class AblationCell:
    backbone: str
    da_on: bool
    temporal_on: bool
    g_mean: float
    iba: float
    increase_pct: float | None  # None for the off/off baseline row


def format_increase(g_mean: float, baseline: float) -> str:
    """Signed one-decimal percent increase over the baseline, e.g. +9.1%."""
    value = increase_value(g_mean, baseline)
    return "-" if value is None else f"{value:+.1f}%"


def increase_value(g_mean: float, baseline: float) -> float | None:
    """Percentage increase rounded to the table's one-decimal format;
    None when the baseline is degenerate (zero)."""
    if baseline == 0.0:
        return None
    return round(100.0 * (g_mean - baseline) / baseline, 1)


def run_cell(cfg: ExperimentConfig, data, da_on: bool, temporal_on: bool, warm_start=None) -> tuple[float, float]:
    cell_cfg = replace(cfg, da_enabled=da_on, temporal_enabled=temporal_on)
    tag = f"{cell_cfg.backbone}_da{int(da_on)}_tp{int(temporal_on)}_s{cfg.seed}"
    out = Path(cfg.out_dir) / f"ablate_{tag}.ckpt"
    ckpt, _ = train(cell_cfg, data=data, warm_start=warm_start if da_on else None, out_path=out)
    model, _, _ = load_model_from_checkpoint(ckpt)
    report, _ = evaluate_model(model, data, "val", iba_alpha=cfg.iba_alpha)
    return report.macro["g_mean"], report.macro["iba"]


def ablate(cfg: ExperimentConfig, backbones: list[str] | None = None, pretrain_attention: bool = True):
    """Run the grid; returns (cells, table text, csv text)."""
    backbones = backbones or ["residual_head"]
    unknown = [b for b in backbones if b not in backbone_names()]
    if unknown:
        raise KeyError(f"unknown backbone '{unknown[0]}' (registered: {', '.join(backbone_names())})")

    data = prepare_data(cfg)
    warm = None
    if pretrain_attention and data.attention.get("train") is not None:
        warm, _ = pretrain_da(cfg, data=data, out_path=Path(cfg.out_dir) / f"ablate_da_s{cfg.seed}.ckpt")

    cells: list[AblationCell] = []
    for backbone in backbones:
        base_cfg = replace(cfg, backbone=backbone)
        grid = {}
        for da_on, temporal_on in ((False, False), (True, False), (False, True), (True, True)):
            grid[(da_on, temporal_on)] = run_cell(base_cfg, data, da_on, temporal_on, warm_start=warm)
        baseline = grid[(False, False)][0]
        for (da_on, temporal_on), (gm, iba) in grid.items():
            cells.append(
                AblationCell(
                    backbone=backbone,
                    da_on=da_on,
                    temporal_on=temporal_on,
                    g_mean=gm,
                    iba=iba,
                    increase_pct=None if (not da_on and not temporal_on) else increase_value(gm, baseline),
                )
            )
    return cells, render_table(cells), render_csv(cells)


def render_table(cells: list[AblationCell]) -> str:
    header = f"{'backbone':<12} {'attention':<10} {'temporal':<9} {'G-mean':>7} {'IBA':>7} {'G-mean increase':>16}"
    lines = [header, "-" * len(header)]
    for c in cells:
        inc = "-" if c.increase_pct is None else f"{c.increase_pct:+.1f}%"
        mark = lambda on: "yes" if on else "-"
        lines.append(
            f"{c.backbone:<12} {mark(c.da_on):<10} {mark(c.temporal_on):<9} {c.g_mean:>7.3f} {c.iba:>7.3f} {inc:>16}"
        )
    return "\n".join(lines)


def render_csv(cells: list[AblationCell]) -> str:
    lines = ["backbone,attention_on,temporal_on,g_mean,iba,g_mean_increase_pct"]
    for c in cells:
        inc = "" if c.increase_pct is None else f"{c.increase_pct:+.1f}"
        lines.append(f"{c.backbone},{int(c.da_on)},{int(c.temporal_on)},{c.g_mean!r},{c.iba!r},{inc}")
    return "\n".join(lines) + "\n"
