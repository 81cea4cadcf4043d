"""Harness checks: config round trips and overrides, checkpoint bit-exact
round trips and mismatch diagnostics, the learning-rate schedule, resume
continuity, ablation table structure, bench reporting, overlays, and the CLI
including its machine-parsable error lines."""

import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from driversight import tensor as T
from driversight.harness.ablation import format_increase, increase_value, render_csv, render_table, AblationCell
from driversight.harness.bench import PAPER_REFERENCE_PARAMS, bench_throughput
from driversight.harness.checkpoint import (
    diff_against_model,
    load_checkpoint,
    save_checkpoint,
    split_model_and_optimizer,
)
from driversight.harness.config import (
    SEED_ENV_VAR,
    ExperimentConfig,
    apply_overrides,
    config_to_text,
    load_config,
    parse_config_text,
)
from driversight.harness.overlays import colormap_jet, emit_overlays, minmax_normalize, overlay_frame
from driversight.harness.training import (
    build_model,
    evaluate_model,
    prepare_data,
    pretrain_da,
    train,
)
from driversight.optim import exponential_lr
from driversight.pipeline import BehaviorPredictor, PipelineSpec
from driversight.tensor import Tensor

FAST = dict(synth_n=40, train_epochs=1, train_batch=8, pretrain_epochs=1, t_len=3, image_size=32)


def fast_config(tmp_path, **kw) -> ExperimentConfig:
    base = dict(FAST)
    base.update(kw)
    return ExperimentConfig(out_dir=str(tmp_path), **base)


class TestConfig:
    def test_text_roundtrip_lossless(self):
        cfg = ExperimentConfig(train_lr=0.00037, fusion_alpha=1 / 3, synth_n=123, da_enabled=False)
        text = config_to_text(cfg)
        cfg2 = ExperimentConfig()
        apply_overrides(cfg2, parse_config_text(text))
        assert cfg == cfg2

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "exp.cfg"
        p.write_text("fusion.mode=cross_attention\nseed=9\n# comment\ntrain.lr=0.01\n")
        cfg = load_config(p, {"seed": "11", "temporal.enabled": "false"}, env={})
        assert cfg.fusion_mode == "cross_attention"
        assert cfg.seed == 11
        assert cfg.temporal_enabled is False
        assert cfg.train_lr == 0.01

    def test_env_seed_wins(self, tmp_path):
        cfg = load_config(None, {"seed": "5"}, env={SEED_ENV_VAR: "77"})
        assert cfg.seed == 77

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            apply_overrides(ExperimentConfig(), {"nope.key": "1"})

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError, match="fusion.mode"):
            ExperimentConfig(fusion_mode="maximal").validate()
        with pytest.raises(ValueError, match="divide by 32"):
            ExperimentConfig(image_size=40).validate()


class TestCheckpoint:
    def test_bitwise_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "w1": rng.standard_normal((3, 4)).astype(np.float32),
            "nested.w2": rng.standard_normal((2, 2, 2)).astype(np.float32),
        }
        cfg = ExperimentConfig(seed=4)
        path = save_checkpoint(tmp_path / "x.ckpt", arrays, cfg, meta={"phase": "test"})
        loaded, cfg2, meta = load_checkpoint(path)
        assert meta["phase"] == "test"
        assert cfg2 == cfg
        for name, arr in arrays.items():
            assert loaded[name].dtype == np.float32
            npt.assert_array_equal(loaded[name], arr)
            assert loaded[name].tobytes() == arr.tobytes()

    def test_save_load_save_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        arrays = {"a": rng.standard_normal(7).astype(np.float32)}
        cfg = ExperimentConfig()
        p1 = save_checkpoint(tmp_path / "a.ckpt", arrays, cfg)
        loaded, cfg2, _ = load_checkpoint(p1)
        p2 = save_checkpoint(tmp_path / "b.ckpt", loaded, cfg2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_cross_config_load_reports_shape_diff(self, tmp_path):
        cfg_a = ExperimentConfig(**{**FAST, "t_len": 3})
        cfg_b = ExperimentConfig(**{**FAST, "t_len": 4})
        model_a = build_model(cfg_a)
        model_b = build_model(cfg_b)
        diff = diff_against_model(dict(model_a.state_dict()), dict(model_b.state_dict()))
        assert any("shape mismatch" in p for p in diff)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"garbagegarbage")
        with pytest.raises(ValueError, match="bad magic"):
            load_checkpoint(p)

    def test_optimizer_arrays_partitioned(self):
        arrays = {"adam.t": np.ones(1, np.float32), "adam.m.w": np.ones(2, np.float32), "w": np.ones(2, np.float32)}
        model, opt = split_model_and_optimizer(arrays)
        assert set(model) == {"w"} and set(opt) == {"adam.t", "adam.m.w"}


class TestSchedule:
    def test_exponential_decay_values(self):
        assert exponential_lr(0.02, 0.8, 0) == pytest.approx(0.02)
        assert exponential_lr(0.02, 0.8, 1) == pytest.approx(0.016)
        assert exponential_lr(0.02, 0.8, 2) == pytest.approx(0.0128)


class TestTrainingPhases:
    def test_pretrain_reduces_loss(self, tmp_path):
        cfg = fast_config(tmp_path, synth_n=60, pretrain_epochs=3, pretrain_batch=16)
        _, history = pretrain_da(cfg)
        assert history[-1] < history[0]

    def test_pretrain_requires_attention_maps(self, tmp_path):
        cfg = fast_config(tmp_path)
        data = prepare_data(cfg)
        data.attention["train"] = None
        with pytest.raises(ValueError, match="attention ground truth missing"):
            pretrain_da(cfg, data=data)

    def test_resume_continues_from_saved_state(self, tmp_path):
        cfg = fast_config(tmp_path, synth_n=48, train_epochs=2)
        data = prepare_data(cfg)
        ck1, hist1 = train(cfg, data=data, out_path=tmp_path / "a.ckpt")

        # one long run vs. short run + resume: first resumed loss must match
        cfg_short = fast_config(tmp_path, synth_n=48, train_epochs=1)
        ck_s, _ = train(cfg_short, data=data, out_path=tmp_path / "s.ckpt")
        ck_r, hist_r = train(cfg_short, data=data, warm_start=ck_s, out_path=tmp_path / "r.ckpt")
        assert hist_r[0]["epoch"] == 1
        assert hist_r[0]["train_loss"] == pytest.approx(hist1[1]["train_loss"], rel=1e-6)

    def test_da_freeze_skips_saliency_updates(self, tmp_path):
        cfg = fast_config(tmp_path, synth_n=40, da_freeze=True)
        data = prepare_data(cfg)
        model_before = build_model(cfg)
        sal_before = {k: v.copy() for k, v in model_before.saliency.state_dict().items() if not k.startswith("buffer:")}
        ck, _ = train(cfg, data=data, out_path=tmp_path / "f.ckpt")
        arrays, _, _ = load_checkpoint(ck)
        for name, before in sal_before.items():
            npt.assert_array_equal(arrays[f"saliency.{name}"], before)

    def test_strict_determinism_bitwise(self, tmp_path):
        cfg = fast_config(tmp_path, synth_n=40, train_epochs=1, strict_determinism=True)
        ck1, _ = train(cfg, out_path=tmp_path / "d1.ckpt")
        ck2, _ = train(cfg, out_path=tmp_path / "d2.ckpt")
        assert ck1.read_bytes() == ck2.read_bytes()

    def test_evaluate_is_deterministic(self, tmp_path):
        cfg = fast_config(tmp_path, synth_n=40)
        data = prepare_data(cfg)
        model = build_model(cfg)
        r1, m1 = evaluate_model(model, data, "val")
        r2, m2 = evaluate_model(model, data, "val")
        npt.assert_array_equal(m1, m2)
        assert r1.as_lines() == r2.as_lines()

    def test_missing_split_rejected(self, tmp_path):
        cfg = fast_config(tmp_path, synth_n=40)
        data = prepare_data(cfg)
        model = build_model(cfg)
        with pytest.raises(ValueError, match="absent"):
            evaluate_model(model, data, "holdout")

    def test_pretrain_determinism_bitwise(self, tmp_path):
        cfg = fast_config(tmp_path, synth_n=30, pretrain_epochs=1, strict_determinism=True)
        p1, _ = pretrain_da(cfg, out_path=tmp_path / "p1.ckpt")
        p2, _ = pretrain_da(cfg, out_path=tmp_path / "p2.ckpt")
        assert p1.read_bytes() == p2.read_bytes()

    def test_evaluate_perfect_predictor_scores_one(self, tmp_path):
        cfg = fast_config(tmp_path, synth_n=60)
        data = prepare_data(cfg)

        class Oracle:
            training = False

            def train(self, mode=True):
                return self

            def eval(self):
                return self

            def __call__(self, frames):
                # looks each batch row up by identity: a stand-in for a
                # checkpoint that fits the split perfectly
                out = np.full((frames.shape[0], 3), -10.0, dtype=np.float32)
                for row in range(frames.shape[0]):
                    match = np.where((data.frames["val"] == frames.data[row]).all(axis=(1, 2, 3, 4)))[0][0]
                    out[row, data.labels["val"][match]] = 10.0
                return Tensor(out)

        report, _ = evaluate_model(Oracle(), data, "val")
        for name in ("precision", "recall", "specificity", "f1", "g_mean", "iba"):
            assert report.macro[name] == pytest.approx(1.0, abs=1e-12)

    def test_majority_stub_scores_near_zero_g_mean(self, tmp_path):
        # zero the head: logits constant, argmax tie-breaks to class 0 (brake)
        cfg = fast_config(tmp_path, synth_n=60)
        data = prepare_data(cfg)
        model = build_model(cfg)
        model.classifier.fc2.weight.data = np.zeros_like(model.classifier.fc2.weight.data)
        model.classifier.fc2.bias.data = np.zeros_like(model.classifier.fc2.bias.data)
        report, m = evaluate_model(model, data, "val")
        assert m[:, 0].sum() == m.sum()  # everything predicted brake
        assert report.macro["g_mean"] < 0.2


@pytest.mark.slow
class TestAblateEndToEnd:
    def test_single_backbone_grid(self, tmp_path):
        from driversight.harness.ablation import ablate

        cfg = fast_config(tmp_path, synth_n=40, train_epochs=1, pretrain_epochs=1)
        cells, table, csv_text = ablate(cfg, ["plain_cnn"])
        assert len(cells) == 4  # the full 2x2 grid
        baselines = [c for c in cells if not c.da_on and not c.temporal_on]
        assert len(baselines) == 1 and baselines[0].increase_pct is None
        assert table.splitlines()[0].startswith("backbone")
        assert len(csv_text.strip().splitlines()) == 5

    def test_repeat_run_is_identical(self, tmp_path):
        from driversight.harness.ablation import ablate

        cfg = fast_config(tmp_path, synth_n=30, train_epochs=1, pretrain_epochs=1)
        _, table1, _ = ablate(cfg, ["patch_mlp"])
        _, table2, _ = ablate(cfg, ["patch_mlp"])
        assert table1 == table2


class TestAblationTable:
    def make_cells(self):
        rows = []
        for backbone in ("alpha", "beta"):
            base = 0.659
            rows.append(AblationCell(backbone, False, False, base, 0.435, None))
            rows.append(AblationCell(backbone, True, False, 0.689, 0.477, increase_value(0.689, base)))
            rows.append(AblationCell(backbone, False, True, 0.674, 0.458, increase_value(0.674, base)))
            rows.append(AblationCell(backbone, True, True, 0.719, 0.513, increase_value(0.719, base)))
        return rows

    def test_grid_has_four_rows_per_backbone(self):
        cells = self.make_cells()
        assert len(cells) == 8
        table = render_table(cells)
        assert table.count("\n") == 9  # header + separator + 8 rows

    def test_baseline_row_has_blank_increase(self):
        cells = self.make_cells()
        table = render_table(cells)
        first_row = table.splitlines()[2]
        assert first_row.rstrip().endswith("-")

    def test_increase_formula_and_formatting(self):
        # 0.659 -> 0.719 formats as +9.1%
        assert format_increase(0.719, 0.659) == "+9.1%"
        assert increase_value(0.719, 0.659) == 9.1
        assert format_increase(0.52, 0.659) == "-21.1%"

    def test_csv_structure(self):
        csv_text = render_csv(self.make_cells())
        lines = csv_text.strip().splitlines()
        assert lines[0] == "backbone,attention_on,temporal_on,g_mean,iba,g_mean_increase_pct"
        assert len(lines) == 9


class TestBench:
    def test_tiny_report(self):
        spec = PipelineSpec(preset="tiny", t_len=3, image_size=32)
        model = BehaviorPredictor(spec, rng=np.random.default_rng(0))
        report = bench_throughput(model, batch=4, n_iter=3, warmup=1)
        assert report.images_per_s_mean > 0 and math.isfinite(report.images_per_s_std)
        assert report.parameter_count == model.parameter_count()
        assert report.mac_estimate > 0
        lines = report.as_lines()
        assert any(line.startswith("parameter_count=") for line in lines)
        assert any(str(PAPER_REFERENCE_PARAMS) in line for line in lines)

    def test_mac_estimate_exceeds_parameter_count(self):
        # every weight is used at least once per forward
        spec = PipelineSpec(preset="tiny", t_len=2, image_size=32)
        model = BehaviorPredictor(spec, rng=np.random.default_rng(1))
        report = bench_throughput(model, batch=1, n_iter=1, warmup=0)
        conv_like = sum(
            p.data.size for n, p in model.named_parameters() if "weight" in n
        )
        assert report.mac_estimate > conv_like / 2


class TestOverlays:
    def test_minmax_and_colormap(self):
        m = np.array([[0.2, 0.4], [0.6, 0.2]])
        norm = minmax_normalize(m)
        assert norm.min() == 0.0 and norm.max() == 1.0
        heat = colormap_jet(norm)
        assert heat.shape == (3, 2, 2)
        assert heat.min() >= 0.0 and heat.max() <= 1.0

    def test_uniform_map_gives_tinted_frame(self):
        rng = np.random.default_rng(0)
        frame = rng.random((3, 4, 4))
        attn = np.full((4, 4), 0.7)
        out = overlay_frame(frame, attn, beta=0.4)
        tint = colormap_jet(np.zeros((4, 4)))  # constant maps normalise to 0
        npt.assert_allclose(out, 0.6 * frame + 0.4 * tint, atol=1e-12)

    def test_grid_layout(self, tmp_path):
        rng = np.random.default_rng(1)
        frames = rng.random((2, 4, 3, 8, 8))
        maps = rng.random((2, 4, 1, 8, 8))
        out = emit_overlays(frames, maps, tmp_path / "grid.png", pad=2)
        from driversight.data import load_png

        grid = load_png(out)
        assert grid.shape == (3, 2 * 8 + 2, 4 * 8 + 3 * 2)

    def test_pixel_rule(self, tmp_path):
        frames = np.full((1, 1, 3, 2, 2), 0.5)
        maps = np.zeros((1, 1, 1, 2, 2))
        maps[0, 0, 0, 0, 0] = 1.0
        out = emit_overlays(frames, maps, tmp_path / "o.png", beta=0.4, pad=0)
        from driversight.data import load_png

        grid = load_png(out)
        expected = overlay_frame(frames[0, 0], maps[0, 0, 0], 0.4)
        npt.assert_allclose(grid, np.round(255 * expected) / 255, atol=1e-7)


def run_cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "driversight.harness.cli", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
        env={**os.environ, "PYTHONPATH": str(Path(__file__).parent.parent / "src")},
    )


@pytest.mark.slow
class TestCli:
    def test_synth_then_train_then_eval_then_overlays(self, tmp_path):
        out = run_cli(
            ["synth", "--out", str(tmp_path / "data"), "--synth.n=30", "--t_len=3"], tmp_path
        )
        assert out.returncode == 0, out.stderr
        manifest = tmp_path / "data" / "manifest.txt"
        assert manifest.exists()

        out = run_cli(
            [
                "train",
                f"--data.manifest={manifest}",
                "--t_len=3",
                "--train.epochs=1",
                "--synth.n=30",
                f"--out_dir={tmp_path / 'runs'}",
            ],
            tmp_path,
        )
        assert out.returncode == 0, out.stderr
        ckpt = tmp_path / "runs" / "train.ckpt"
        assert ckpt.exists()
        assert (tmp_path / "runs" / "train.losses.csv").exists()

        out = run_cli(["eval", "--checkpoint", str(ckpt), "--split", "val", "--report", str(tmp_path / "rep.txt")], tmp_path)
        assert out.returncode == 0, out.stderr
        assert "macro.g_mean=" in out.stdout
        assert (tmp_path / "rep.txt").exists() and (tmp_path / "rep.json").exists()
        json.loads((tmp_path / "rep.json").read_text())

        out = run_cli(["overlays", "--checkpoint", str(ckpt), "--out", str(tmp_path / "ov"), "--count", "2"], tmp_path)
        assert out.returncode == 0, out.stderr
        assert (tmp_path / "ov" / "overlays.png").exists()

    def test_bench_smoke(self, tmp_path):
        out = run_cli(["bench", "--batch", "2", "--iters", "2", "--synth.n=20", "--t_len=2"], tmp_path)
        assert out.returncode == 0, out.stderr
        assert "images_per_s_mean=" in out.stdout

    def test_show_config_roundtrip(self, tmp_path):
        out = run_cli(["show-config", "--fusion.alpha=0.25"], tmp_path)
        assert out.returncode == 0
        assert "fusion.alpha=0.25" in out.stdout

    def test_error_line_is_machine_parsable(self, tmp_path):
        out = run_cli(["eval", "--checkpoint", str(tmp_path / "missing.ckpt")], tmp_path)
        assert out.returncode != 0
        line = out.stderr.strip().splitlines()[-1]
        assert line.startswith("error code=missing_file message=")

    def test_unknown_backbone_error_code(self, tmp_path):
        out = run_cli(["ablate", "--backbones", "not_a_backbone", "--synth.n=20", "--t_len=2"], tmp_path)
        assert out.returncode != 0
        assert "error code=unknown_backbone" in out.stderr

    def test_unknown_config_key_error_code(self, tmp_path):
        out = run_cli(["train", "--bogus.key=1"], tmp_path)
        assert out.returncode != 0
        assert "error code=invalid_config" in out.stderr

    def test_env_seed_override(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "driversight.harness.cli", "show-config"],
            capture_output=True,
            text=True,
            env={**os.environ, "STDA_SEED": "12345", "PYTHONPATH": str(Path(__file__).parent.parent / "src")},
        )
        assert "seed=12345" in result.stdout
