import json
import os

import pytest

from mesrnn.cli import main


def run(*argv):
    return main(list(argv))


@pytest.fixture()
def synth_file(tmp_path):
    path = tmp_path / "corpus.txt"
    assert run("synth", "--spec", "crossing:n=3,scenes=6,seed=4", "--out", str(path)) == 0
    return path


@pytest.fixture()
def data_dir(tmp_path, synth_file):
    d = tmp_path / "data"
    d.mkdir()
    os.rename(synth_file, d / "corpus.txt")
    return d


def train_quick(tmp_path, data_dir, out_name="model.ckpt", *extra):
    out = tmp_path / out_name
    code = run(
        "train", "--data", str(data_dir), "--model", "srnn",
        "--epochs", "1", "--dropout", "0", "--seed", "5", "--out", str(out), *extra,
    )
    assert code == 0, "training failed"
    return out


class TestSynth:
    def test_writes_manifest(self, tmp_path, synth_file):
        manifest = json.loads((tmp_path / "corpus.txt.manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["config"]["spec"] == "crossing:n=3,scenes=6,seed=4"

    def test_bad_spec_exit_3(self, tmp_path):
        assert run("synth", "--spec", "warp:n=2", "--out", str(tmp_path / "x.txt")) == 3


class TestTrain:
    def test_deterministic_checkpoints(self, tmp_path, data_dir):
        a = train_quick(tmp_path, data_dir, "a.ckpt")
        b = train_quick(tmp_path, data_dir, "b.ckpt")
        assert a.read_bytes() == b.read_bytes()
        history = (tmp_path / "a.ckpt.history.csv").read_text().splitlines()
        assert history[0] == "epoch,train_loss,val_loss"
        manifest = json.loads((tmp_path / "a.ckpt.manifest.json").read_text())
        assert manifest["config"]["model"] == "srnn"
        assert len(manifest["inputs"]) == 1

    def test_synth_inline_deterministic(self, tmp_path):
        outs = []
        for name in ("s1.ckpt", "s2.ckpt"):
            out = tmp_path / name
            assert run(
                "train", "--synth", "crossing:n=4,scenes=5,seed=7", "--model", "vlstm",
                "--epochs", "1", "--dropout", "0", "--seed", "7", "--out", str(out),
            ) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_missing_out_exit_2(self, data_dir):
        assert run("train", "--data", str(data_dir)) == 2

    def test_both_sources_exit_2(self, tmp_path, data_dir):
        assert run(
            "train", "--data", str(data_dir), "--synth", "crossing",
            "--out", str(tmp_path / "x.ckpt"),
        ) == 2

    def test_bad_data_dir_exit_3(self, tmp_path):
        assert run(
            "train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "x.ckpt")
        ) == 3

    def test_divergence_exit_4(self, tmp_path):
        code = run(
            "train", "--synth", "crossing:n=2,scenes=2,seed=1", "--model", "srnn",
            "--epochs", "10", "--lr", "1e308", "--dropout", "0",
            "--out", str(tmp_path / "d.ckpt"),
        )
        assert code == 4

    def test_rerun_from_manifest(self, tmp_path, data_dir):
        first = train_quick(tmp_path, data_dir, "m1.ckpt")
        manifest = str(tmp_path / "m1.ckpt.manifest.json")
        out2 = tmp_path / "m2.ckpt"
        assert run(
            "train", "--manifest", manifest, "--data", str(data_dir),
            "--out", str(out2),
        ) == 0
        assert first.read_bytes() == out2.read_bytes()


class TestEval:
    def test_eval_on_training_data(self, tmp_path, data_dir):
        ckpt = train_quick(tmp_path, data_dir)
        out = tmp_path / "evalout"
        assert run(
            "eval", "--ckpt", str(ckpt), "--data", str(data_dir), "--out", str(out)
        ) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("split,variant,ade_norm")
        fields = lines[1].split(",")
        assert fields[1] == "srnn"
        assert float(fields[2]) > 0  # finite, nonzero ADE
        assert json.loads((out / "metrics.json").read_text())[0]["n_scenes"] > 0

    def test_variant_mismatch_exit_3(self, tmp_path, data_dir):
        ckpt = train_quick(tmp_path, data_dir)
        assert run(
            "eval", "--ckpt", str(ckpt), "--data", str(data_dir),
            "--model", "mesrnn", "--out", str(tmp_path / "x"),
        ) == 3

    def test_loo_two_splits(self, tmp_path):
        splits = tmp_path / "splits"
        for name, seed in (("alpha", 1), ("beta", 2)):
            d = splits / name
            d.mkdir(parents=True)
            assert run(
                "synth", "--spec", f"crossing:n=2,scenes=4,seed={seed}",
                "--out", str(d / "part.txt"),
            ) == 0
        out = tmp_path / "looout"
        assert run(
            "eval", "--loo", "--data", str(splits), "--model", "vlstm",
            "--epochs", "1", "--dropout", "0", "--out", str(out),
        ) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert len(lines) == 4  # header + 2 splits + average
        assert lines[-1].startswith("average,")


class TestPredict:
    def test_svg_output(self, tmp_path, data_dir):
        ckpt = train_quick(tmp_path, data_dir)
        out = tmp_path / "pred"
        assert run(
            "predict", "--ckpt", str(ckpt), "--scene", str(data_dir / "corpus.txt"),
            "--format", "svg", "--out", str(out),
        ) == 0
        svgs = list(out.glob("*.svg"))
        assert svgs and svgs[0].read_text().startswith("<svg")

    def test_zero_parameter_checkpoint_freezes(self, tmp_path, data_dir):
        import numpy as np

        from mesrnn.model import ModelParams, param_spec, save_checkpoint
        from mesrnn.training import NormStats

        params = ModelParams("vlstm", {n: np.zeros(s) for n, s in param_spec("vlstm")})
        ckpt = tmp_path / "zero.ckpt"
        save_checkpoint(params, NormStats(-8, 8, -8, 8), {"seed": 0}, ckpt)
        out = tmp_path / "frozen"
        assert run(
            "predict", "--ckpt", str(ckpt), "--scene", str(data_dir / "corpus.txt"),
            "--format", "json", "--out", str(out),
        ) == 0
        payload = json.loads((out / "results.json").read_text())
        pred = np.array(payload["scenes"][0]["pred_world"])
        first = pred[:, 0]
        assert np.abs(pred - first[:, None]).max() < 1e-9

    def test_short_scene_exit_3(self, tmp_path, data_dir):
        ckpt = train_quick(tmp_path, data_dir)
        short = tmp_path / "short.txt"
        short.write_text("".join(f"{k} 1 {k * 0.1} 0.0\n" for k in range(5)))
        assert run(
            "predict", "--ckpt", str(ckpt), "--scene", str(short),
            "--out", str(tmp_path / "x"),
        ) == 3


class TestVerify:
    def test_pristine_build_exit_0(self, capsys):
        assert run("verify", "--samples", "2", "--scenes", "10") == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_impossible_tolerance_exit_1(self, capsys):
        assert run("verify", "--tol", "1e-12", "--samples", "2", "--scenes", "2") == 1
        assert "FAIL" in capsys.readouterr().out

    def test_seed_variation_passes(self):
        for seed in (3, 17):
            assert run(
                "verify", "--seed", str(seed), "--samples", "2", "--scenes", "5"
            ) == 0


class TestConfigFile:
    def test_config_sets_defaults_flags_win(self, tmp_path, data_dir):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs=1\ndropout=0\nmodel=srnn\nseed=5\n")
        out = tmp_path / "cfg.ckpt"
        assert run(
            "train", "--config", str(cfg), "--data", str(data_dir), "--out", str(out)
        ) == 0
        manifest = json.loads((tmp_path / "cfg.ckpt.manifest.json").read_text())
        # argparse runs string defaults through each flag's type converter
        assert manifest["config"]["epochs"] == 1

    def test_help_documents_defaults(self, capsys):
        assert run("train", "--help") == 0
        text = capsys.readouterr().out
        for flag in ("--epochs", "--lr", "--clip", "--obs", "--pred", "--dropout",
                     "--loss-window", "--seed", "--out"):
            assert flag in text

    @pytest.mark.parametrize("cmd,flags", [
        ("eval", ("--ckpt", "--data", "--loo", "--workers", "--out")),
        ("predict", ("--ckpt", "--scene", "--format", "--out")),
        ("synth", ("--spec", "--out")),
        ("verify", ("--tol", "--fd-step", "--samples", "--scenes", "--seed")),
    ])
    def test_help_covers_every_subcommand(self, capsys, cmd, flags):
        assert run(cmd, "--help") == 0
        text = capsys.readouterr().out
        for flag in flags:
            assert flag in text, (cmd, flag)
