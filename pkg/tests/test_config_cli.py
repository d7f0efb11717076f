"""Config precedence and the command-line surface (exit codes, outputs)."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from deepquality.config import DEFAULTS, ConfigError, RunConfig


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig.load()
        assert cfg.seed == 0
        assert cfg.pooling_config().stride == 32
        assert cfg.split_spec().train_count == 50_000
        assert cfg.train_config().epochs == 100
        assert cfg.network_config().conv_channels == (16, 32, 64)

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('seed = 9\n[pooling]\nstride = 16\n')
        cfg = RunConfig.load(path)
        assert cfg.seed == 9
        assert cfg.pooling_config().stride == 16
        assert cfg.pooling_config().patches_per_image == 70  # untouched default

    def test_cli_overrides_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("seed = 9\n")
        cfg = RunConfig.load(path, {"seed": 11})
        assert cfg.seed == 11

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("sede = 9\n")
        with pytest.raises(ConfigError, match="sede"):
            RunConfig.load(path)

    def test_zero_count_means_uncapped(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[dataset]\ntrain_count = 0\ntest_count = 25\n")
        split = RunConfig.load(path).split_spec()
        assert split.train_count is None
        assert split.test_count == 25

    def test_dump_roundtrip(self, tmp_path):
        cfg = RunConfig.load(None, {"seed": 5, "training": {"epochs": 3}})
        path = tmp_path / "eff.toml"
        cfg.write(path)
        again = RunConfig.load(path)
        assert again.data == cfg.data

    def test_seed_flows_into_training(self):
        cfg = RunConfig.load(None, {"seed": 123})
        assert cfg.train_config().seed == 123


def run_cli(*argv):
    return subprocess.run([sys.executable, "-m", "deepquality.cli", *argv],
                          capture_output=True, text=True)


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    """Clean images and a synthesized corpus for CLI-level tests."""
    from deepquality.textures import write_textures
    base = tmp_path_factory.mktemp("cli")
    write_textures(base / "clean", count=3, seed=70, size=128)
    out = run_cli("synth", "--input-dir", str(base / "clean"),
                  "--out", str(base / "corpus"), "--seed", "3")
    assert out.returncode == 0, out.stderr
    return base


@pytest.fixture(scope="module")
def cli_model(cli_corpus):
    """A minimally trained model via the CLI."""
    cfg = cli_corpus / "train.toml"
    cfg.write_text(
        "seed = 3\n"
        "[pooling]\nstride = 32\npatches_per_image = 9\n"
        "[network]\nconv_channels = [4, 6, 8]\nfc_hidden = 16\n"
        "[dataset]\nsplit_mode = \"image-disjoint\"\ntrain_count = 300\ntest_count = 100\n"
        "[training]\nepochs = 2\nlearning_rate = 0.02\n")
    out_dir = cli_corpus / "run"
    out = run_cli("train", "--config", str(cfg),
                  "--synth-manifest", str(cli_corpus / "corpus/manifest.jsonl"),
                  "--out", str(out_dir))
    assert out.returncode == 0, out.stderr
    return {"base": cli_corpus, "run": out_dir, "config": cfg,
            "summary": json.loads(out.stdout.strip().splitlines()[-1])}


class TestSynthCommand:
    def test_outputs_and_manifest(self, cli_corpus):
        manifest = cli_corpus / "corpus" / "manifest.jsonl"
        lines = manifest.read_text().strip().splitlines()
        assert len(lines) == 3 * 4 * 5
        images = list((cli_corpus / "corpus" / "images").glob("*.png"))
        assert len(images) == 60
        assert (cli_corpus / "corpus" / "config.toml").is_file()

    def test_rerun_bit_identical_manifest(self, cli_corpus, tmp_path):
        out = run_cli("synth", "--input-dir", str(cli_corpus / "clean"),
                      "--out", str(tmp_path / "again"), "--seed", "3")
        assert out.returncode == 0
        assert (tmp_path / "again/manifest.jsonl").read_bytes() == \
               (cli_corpus / "corpus/manifest.jsonl").read_bytes()

    def test_empty_input_dir_exit_2(self, tmp_path):
        (tmp_path / "empty").mkdir()
        out = run_cli("synth", "--input-dir", str(tmp_path / "empty"),
                      "--out", str(tmp_path / "o"))
        assert out.returncode == 2
        assert "no input images" in out.stderr


class TestTrainCommand:
    def test_artifacts_written(self, cli_model):
        run = cli_model["run"]
        for name in ("config.toml", "split.json", "metrics.jsonl", "summary.csv",
                     "curves.png", "model.dqm1", "model_best.dqm1"):
            assert (run / name).is_file(), name

    def test_metrics_lines_per_epoch(self, cli_model):
        lines = (cli_model["run"] / "metrics.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        row = json.loads(lines[0])
        assert {"epoch", "train_loss", "train_accuracy", "test_accuracy",
                "wall_seconds"} <= set(row)

    def test_missing_dataset_exit_2(self, tmp_path):
        out = run_cli("train", "--out", str(tmp_path / "x"))
        assert out.returncode == 2
        assert "no dataset" in out.stderr

    def test_missing_manifest_path_exit_2(self, tmp_path):
        out = run_cli("train", "--synth-manifest", str(tmp_path / "nope.jsonl"),
                      "--out", str(tmp_path / "x"))
        assert out.returncode == 2
        assert "nope.jsonl" in out.stderr

    def test_same_seed_same_model_checksum(self, cli_model, tmp_path):
        """A rerun with the same seed writes a bit-identical model."""
        out = run_cli("train", "--config", str(cli_model["config"]),
                      "--synth-manifest",
                      str(cli_model["base"] / "corpus/manifest.jsonl"),
                      "--out", str(tmp_path / "rerun"))
        assert out.returncode == 0, out.stderr
        rerun = json.loads(out.stdout.strip().splitlines()[-1])
        assert rerun["model_sha256"] == cli_model["summary"]["model_sha256"]


class TestEvalCommand:
    def test_report_files(self, cli_model, tmp_path):
        out = run_cli("eval", "--config", str(cli_model["config"]),
                      "--model", str(cli_model["run"] / "model.dqm1"),
                      "--synth-manifest",
                      str(cli_model["base"] / "corpus/manifest.jsonl"),
                      "--out", str(tmp_path / "ev"))
        assert out.returncode == 0, out.stderr
        report = json.loads((tmp_path / "ev/eval_report.json").read_text())
        assert set(report) >= {"patch", "image", "per_distortion"}
        assert len(report["per_distortion"]) == 4
        for name in ("per_image.csv", "per_distortion.csv", "confusion_patch.png",
                     "confusion_image.png", "ladder.png"):
            assert (tmp_path / "ev" / name).is_file(), name

    def test_patch_accuracy_matches_evaluate_patches(self, cli_model, tmp_path):
        """The eval pipeline and the training-side evaluator agree."""
        from deepquality.dataset import load_synth_manifest, patches_for_records
        from deepquality.model_io import load_model
        from deepquality.pooling import PoolingConfig
        from deepquality.training import evaluate_patches
        out = run_cli("eval", "--config", str(cli_model["config"]),
                      "--model", str(cli_model["run"] / "model.dqm1"),
                      "--synth-manifest",
                      str(cli_model["base"] / "corpus/manifest.jsonl"),
                      "--out", str(tmp_path / "ev2"))
        assert out.returncode == 0
        report = json.loads((tmp_path / "ev2/eval_report.json").read_text())
        records = load_synth_manifest(cli_model["base"] / "corpus/manifest.jsonl")
        pool = PoolingConfig(stride=32, patches_per_image=9)
        ds = patches_for_records(records, pool)
        direct = evaluate_patches(load_model(cli_model["run"] / "model.dqm1").net, ds)
        assert report["patch"]["accuracy"] == pytest.approx(direct.accuracy)

    def test_accuracy_gate_exit_1(self, cli_model, tmp_path):
        out = run_cli("eval", "--config", str(cli_model["config"]),
                      "--model", str(cli_model["run"] / "model.dqm1"),
                      "--synth-manifest",
                      str(cli_model["base"] / "corpus/manifest.jsonl"),
                      "--out", str(tmp_path / "ev3"),
                      "--min-patch-accuracy", "1.01")
        assert out.returncode == 1


class TestScoreCommand:
    def test_json_schema_and_single_patch(self, cli_model, tmp_path):
        """A 64x64 input scores exactly one patch and valid JSON."""
        from deepquality.imgio import save_gray_png
        rng = np.random.default_rng(1)
        img = tmp_path / "img.png"
        save_gray_png(img, rng.random((64, 64)))
        out = run_cli("score", "--model", str(cli_model["run"] / "model.dqm1"),
                      str(img))
        assert out.returncode == 0, out.stderr
        result = json.loads(out.stdout)
        assert result["grade"] in [f"c{k}" for k in range(5)]
        assert result["grade_index"] == int(result["grade"][1])
        assert len(result["probabilities"]) == 5
        assert abs(sum(result["probabilities"]) - 1.0) < 1e-6
        assert result["patch_count"] == 1

    def test_per_patch_csv(self, cli_model, tmp_path):
        from deepquality.imgio import save_gray_png
        rng = np.random.default_rng(2)
        img = tmp_path / "img.png"
        save_gray_png(img, rng.random((96, 96)))
        csv_path = tmp_path / "pp.csv"
        out = run_cli("score", "--model", str(cli_model["run"] / "model.dqm1"),
                      str(img), "--per-patch", str(csv_path))
        assert out.returncode == 0
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0].startswith("row,col,variance")
        assert len(lines) > 1

    def test_small_image_exit_2(self, cli_model, tmp_path):
        from deepquality.imgio import save_gray_png
        img = tmp_path / "small.png"
        save_gray_png(img, np.zeros((32, 32)))
        out = run_cli("score", "--model", str(cli_model["run"] / "model.dqm1"),
                      str(img))
        assert out.returncode == 2

    def test_corrupt_model_exit_3(self, cli_model, tmp_path):
        bad = tmp_path / "bad.dqm1"
        bad.write_bytes(b"JUNKJUNKJUNK")
        img = tmp_path / "img.png"
        from deepquality.imgio import save_gray_png
        save_gray_png(img, np.zeros((64, 64)))
        out = run_cli("score", "--model", str(bad), str(img))
        assert out.returncode == 3


class TestGradcheckCommand:
    def test_stock_build_passes(self):
        out = run_cli("gradcheck", "--seed", "0")
        assert out.returncode == 0, out.stdout + out.stderr
        assert "PASS" in out.stdout
        lines = [l for l in out.stdout.splitlines() if "max_rel_err" in l]
        assert len(lines) == 10
