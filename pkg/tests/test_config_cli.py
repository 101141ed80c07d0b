import json
import subprocess
import sys

import numpy as np
import pytest

from swis.cli import main
from swis.config import RunConfig, dump_config, parse_config, parse_config_text, write_config
from swis.errors import ConfigError
from swis.evaluate import FeatureSet
from swis.synthetic import separable_features, write_bhsig_tree


class TestConfig:
    def test_empty_gives_defaults(self):
        assert parse_config_text("") == RunConfig()

    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.optimizer.lr == 0.1 and cfg.optimizer.momentum == 0.9
        assert cfg.schedule.warmup_epochs == 10 and cfg.schedule.horizon_epochs == 1000
        assert cfg.model.backbone == "resnet18" and cfg.dataset.n_ref == 8

    def test_comments_and_strings(self):
        cfg = parse_config_text('# hi\n\nmodel.backbone = tiny_cnn  # inline\nrun.name = "a b"\n')
        assert cfg.model.backbone == "tiny_cnn" and cfg.run.name == "a b"

    def test_comment_after_quoted_string(self):
        cfg = parse_config_text('model.backbone = "tiny_cnn"   # or resnet18\nrun.name = "a # b"\n')
        assert cfg.model.backbone == "tiny_cnn" and cfg.run.name == "a # b"
        with pytest.raises(ConfigError, match="trailing text"):
            parse_config_text('run.name = "a" b')

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key: optimizer.learning_rate"):
            parse_config_text("optimizer.learning_rate = 0.1")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("nosection = 1")

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match="expected int"):
            parse_config_text("train.batch_size = 3.5")
        with pytest.raises(ConfigError, match="expected bool"):
            parse_config_text("dataset.include_pretrain_forgeries = yes")

    def test_duplicate(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seeds.data = 1\nseeds.data = 2")

    def test_invalid_choice(self):
        with pytest.raises(ConfigError):
            parse_config_text("objective.name = mse")

    def test_round_trip(self, tmp_path):
        cfg = parse_config_text('model.backbone = "tiny_cnn"\noptimizer.lr = 0.05\ntrain.epochs = 7\n')
        path = write_config(cfg, tmp_path / "c.txt")
        assert parse_config(path) == cfg
        assert dump_config(parse_config(path)) == dump_config(cfg)

    def test_builders(self):
        cfg = parse_config_text('dataset.dataset_id = "bhsig260_hindi"\noptimizer.trust_coefficient = 0.002')
        assert cfg.schedule_config().train_epochs == 200
        assert cfg.optimizer_config().trust_coefficient == 0.002
        assert cfg.model_config().backbone.name == "resnet18"

    def test_gamma_number(self):
        assert parse_config_text("eval.svm_gamma = 0.5").eval_config().svm_gamma == 0.5
        with pytest.raises(ConfigError):
            parse_config_text("eval.svm_gamma = wide").eval_config()


class TestCli:
    def test_selfcheck(self, capsys):
        assert main(["selfcheck"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 8 and "FAIL" not in out

    def test_pretrain_without_config(self):
        assert main(["pretrain"]) == 2

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["pretrain", "--config", str(tmp_path / "none.txt")]) == 1

    def test_bad_config_is_runtime_error(self, tmp_path, capsys):
        path = tmp_path / "c.txt"
        path.write_text("foo.bar = 1\n")
        assert main(["pretrain", "--config", str(path)]) == 1
        assert "unknown key: foo.bar" in capsys.readouterr().err

    def test_evaluate_needs_inputs(self, tmp_path):
        assert main(["evaluate", "--out", str(tmp_path)]) == 2

    def test_ingest(self, tmp_path):
        root = write_bhsig_tree(tmp_path / "data", "bengali", n_genuine=10, n_forged=2)
        out = tmp_path / "m.csv"
        assert main(["ingest", "--root", str(root), "--dataset-id", "bhsig260_bengali", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 100 * 12
        assert json.loads((tmp_path / "m.meta.json").read_text()) == {"dataset_id": "bhsig260_bengali", "seed": 0}

    def test_ingest_missing_root(self, tmp_path):
        assert main(["ingest", "--root", str(tmp_path / "x"), "--dataset-id", "custom", "--out",
                     str(tmp_path / "m.csv")]) == 1

    def test_evaluate_and_tsne_from_features(self, tmp_path):
        feats, writers, labels, roles = separable_features(n_writers=3)
        fs = FeatureSet(feats, writers, labels, roles, [str(i) for i in range(len(writers))])
        fpath = fs.save(tmp_path / "f.npz")
        out = tmp_path / "eval"
        assert main(["evaluate", "--features", str(fpath), "--out", str(out)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["accuracy"] == 1.0
        assert {"metrics.json", "records.csv", "tsne.png", "config.txt", "version.json"} <= {
            p.name for p in out.iterdir()}
        png = tmp_path / "t.png"
        assert main(["tsne", "--features", str(fpath), "--out", str(png), "--perplexity", "10"]) == 0
        assert png.read_bytes()[:4] == b"\x89PNG"

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "swis", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("swis ")
