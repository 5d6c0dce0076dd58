import hashlib
import re

import numpy as np
import pytest

from kwspot.cli import build_parser, main
from kwspot.features import read_feature_cache
from kwspot.reporting import THRESHOLD, read_metrics


@pytest.fixture(scope="module")
def workspace(small_corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["prepare", "--data-dir", str(small_corpus), "--out", str(root / "m.tsv")]) == 0
    assert main(["featurize", "--manifest", str(root / "m.tsv"), "--out", str(root / "spec")]) == 0
    return root


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestPrepare:
    def test_histogram_and_rerun(self, small_corpus, tmp_path, capsys):
        args = ["prepare", "--data-dir", str(small_corpus), "--seed", "2"]
        assert main(args + ["--out", str(tmp_path / "a.tsv")]) == 0
        out = capsys.readouterr().out
        assert "SILENCE" in out and "UNKNOWN" in out
        assert main(args + ["--out", str(tmp_path / "b.tsv")]) == 0
        assert digest(tmp_path / "a.tsv") == digest(tmp_path / "b.tsv")

    def test_bad_split_ratio(self, small_corpus, tmp_path, capsys):
        rc = main(["prepare", "--data-dir", str(small_corpus), "--out", str(tmp_path / "m.tsv"),
                   "--split-ratio", "1.2"])
        assert rc == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and "--split-ratio" in err[0]
        assert not (tmp_path / "m.tsv").exists()

    def test_missing_dir(self, tmp_path, capsys):
        assert main(["prepare", "--data-dir", str(tmp_path / "nope"), "--out", str(tmp_path / "m.tsv")]) == 2
        assert "--data-dir" in capsys.readouterr().err


class TestFeaturize:
    def test_default_spectrogram_shape(self, workspace):
        fs = read_feature_cache(workspace / "spec" / "train.feat")
        assert fs.shape == (28, 28)
        assert (workspace / "spec" / "validation.feat").is_file()

    def test_amplitude_and_pgm(self, workspace, tmp_path):
        rc = main(["featurize", "--manifest", str(workspace / "m.tsv"), "--mode", "amplitude",
                   "--max-per-class", "2", "--dump-pgm", "--out", str(tmp_path / "amp")])
        assert rc == 0
        assert read_feature_cache(tmp_path / "amp" / "train.feat").shape == (100, 100)
        pgms = list((tmp_path / "amp" / "pgm").rglob("*.pgm"))
        assert pgms and pgms[0].read_bytes().startswith(b"P5\n100 100\n255\n")

    def test_noise_ratio_changes_images_only(self, workspace, tmp_path):
        base = ["featurize", "--manifest", str(workspace / "m.tsv"), "--max-per-class", "3"]
        assert main(base + ["--out", str(tmp_path / "clean")]) == 0
        assert main(base + ["--noise-ratio", "0.5", "--out", str(tmp_path / "noisy")]) == 0
        clean = read_feature_cache(tmp_path / "clean" / "train.feat")
        noisy = read_feature_cache(tmp_path / "noisy" / "train.feat")
        assert digest(tmp_path / "clean" / "train.feat") != digest(tmp_path / "noisy" / "train.feat")
        np.testing.assert_array_equal(clean.labels, noisy.labels)

    def test_bad_buckets(self, workspace, tmp_path, capsys):
        rc = main(["featurize", "--manifest", str(workspace / "m.tsv"), "--mode", "mfcc", "--buckets", "50",
                   "--out", str(tmp_path / "x")])
        assert rc == 2 and "--buckets" in capsys.readouterr().err


class TestTrain:
    def test_outputs_and_progress(self, workspace, tmp_path, capsys):
        rc = main(["train", "--features", str(workspace / "spec"), "--epochs", "2", "--out-dir", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert len(re.findall(r"^epoch\s+\d+\s+cost", out, re.M)) == 2
        for name in ("metrics.csv", "model.ckpt", "train_cost.svg", "accuracy.svg"):
            assert (tmp_path / name).is_file()

    def test_mnist_rejects_amplitude(self, workspace, tmp_path, capsys):
        main(["featurize", "--manifest", str(workspace / "m.tsv"), "--mode", "amplitude", "--max-per-class", "1",
              "--out", str(tmp_path / "amp")])
        rc = main(["train", "--features", str(tmp_path / "amp"), "--model", "mnist", "--out-dir", str(tmp_path / "t")])
        assert rc == 2 and "28x28" in capsys.readouterr().err
        assert not (tmp_path / "t").exists()

    def test_vat_logs_tripled_count(self, workspace, tmp_path, capsys):
        n = len(read_feature_cache(workspace / "spec" / "train.feat"))
        rc = main(["train", "--features", str(workspace / "spec"), "--epochs", "1", "--vat", "both",
                   "--out-dir", str(tmp_path)])
        assert rc == 0
        assert f"training on {3 * n} examples" in capsys.readouterr().out

    def test_cost_threshold(self, workspace, tmp_path):
        rc = main(["train", "--features", str(workspace / "spec"), "--epochs", "20", "--cost-threshold", "3.0",
                   "--out-dir", str(tmp_path)])
        assert rc == 0
        rec = read_metrics(tmp_path / "metrics.csv")
        assert rec.exit_reason == THRESHOLD and rec.exit_epoch == 1
        assert "exit_reason=THRESHOLD" in (tmp_path / "metrics.csv").read_text()

    def test_every_violation_reported(self, workspace, tmp_path, capsys):
        rc = main(["train", "--features", str(workspace / "spec"), "--epochs", "0", "--batch-size", "0",
                   "--out-dir", str(tmp_path)])
        err = capsys.readouterr().err.strip().splitlines()
        assert rc == 2 and len(err) == 2
        assert "--epochs" in err[0] and "--batch-size" in err[1]

    def test_config_overlay_precedence(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs=2\ntrain.batch-size=32\nsweep.repeats=9\nseed=4\n")
        rc = main(["train", "--config", str(cfg), "--features", str(workspace / "spec"), "--seed", "1",
                   "--out-dir", str(tmp_path / "o")])
        assert rc == 0
        assert len(read_metrics(tmp_path / "o" / "metrics.csv").rows) == 2
        cfg.write_text("epochz=2\n")
        assert main(["train", "--config", str(cfg), "--features", str(workspace / "spec"),
                     "--out-dir", str(tmp_path / "o")]) == 2
        assert "epochz" in capsys.readouterr().err

    def test_missing_features(self, tmp_path, capsys):
        assert main(["train", "--features", str(tmp_path / "none"), "--out-dir", str(tmp_path)]) == 2
        assert capsys.readouterr().err.strip()


class TestSweepAndEval:
    def test_unknown_param(self, workspace, tmp_path, capsys):
        rc = main(["sweep", "--features", str(workspace / "spec"), "--param", "colour", "--values", "1",
                   "--out-dir", str(tmp_path)])
        err = capsys.readouterr().err
        assert rc == 2 and "buckets" in err and "stride" in err

    def test_stride_sweep_refeaturizes(self, workspace, tmp_path):
        rc = main(["sweep", "--features", str(workspace / "spec"), "--param", "stride", "--values", "10,20",
                   "--repeats", "1", "--epochs", "1", "--out-dir", str(tmp_path)])
        assert rc == 0
        lines = (tmp_path / "sweep_window_stride.csv").read_text().splitlines()
        assert len(lines) == 3 and (tmp_path / "sweep_window_stride.svg").is_file()

    def test_trainer_sweep_reuses_cache(self, workspace, tmp_path):
        rc = main(["sweep", "--features", str(workspace / "spec"), "--param", "init",
                   "--values", "xavier,trunc-normal", "--repeats", "2", "--epochs", "1", "--out-dir", str(tmp_path)])
        assert rc == 0
        assert len((tmp_path / "sweep_init.csv").read_text().splitlines()) == 5

    def test_eval(self, workspace, tmp_path, capsys):
        main(["train", "--features", str(workspace / "spec"), "--epochs", "2", "--out-dir", str(tmp_path)])
        capsys.readouterr()
        rc = main(["eval", "--checkpoint", str(tmp_path / "model.ckpt"), "--features", str(workspace / "spec")])
        out = capsys.readouterr().out
        assert rc == 0 and re.search(r"accuracy \d\.\d{4}\s+mean_cost \d+\.\d+", out)

    def test_eval_garbage_checkpoint(self, workspace, tmp_path, capsys):
        (tmp_path / "bad.ckpt").write_bytes(b"junk")
        rc = main(["eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "--features", str(workspace / "spec")])
        assert rc == 1 and "failed" in capsys.readouterr().err


class TestHelp:
    EXPECTED = {
        "prepare": ["--split-ratio", "0.8", "--silence-frac", "0.1"],
        "featurize": ["--window-ms", "30.0", "--stride-ms", "10.0", "--buckets", "40", "--noise-ratio", "0.0",
                      "--max-per-class", "300", "--dump-pgm"],
        "train": ["--batch-size", "64", "--optimizer", "--init", "--lr", "--epochs", "--cost-threshold",
                  "--dropout-keep", "--vat", "--seed", "--out-dir", "--model"],
        "sweep": ["--repeats", "3", "--param", "--values", "--features", "--manifest"],
        "compare-vat": ["--zoom-epochs", "10"],
        "eval": ["--checkpoint", "--features"],
        "synth": ["--clips-per-word", "100"],
    }

    @pytest.mark.parametrize("command", sorted(EXPECTED))
    def test_help_lists_flags_and_defaults(self, command, capsys):
        assert main([command, "--help"]) == 0
        text = " ".join(capsys.readouterr().out.split())
        for token in self.EXPECTED[command]:
            assert token in text
        assert "default:" in text

    def test_every_flag_has_help(self):
        parser = build_parser()
        sub = next(a for a in parser._actions if a.choices and "train" in a.choices)
        for p in sub.choices.values():
            for action in p._actions:
                assert action.help
