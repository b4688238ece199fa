"""Config-file parsing and the command-line interface."""

import numpy as np
import pytest

from dsat.cli import build_parser, main
from dsat.config import config_items, load_config, write_resolved
from dsat.data import load_image, save_image
from dsat.errors import ConfigError
from dsat.train import TrainConfig

TINY_RUN = """\
[run]
preset = desk
pool = synthetic:4:48
mode = two_spec
batch_images = 2
lr_patch = 8
encoder_steps = 3
joint_steps = 3
queue_capacity = 16
encoder_base_width = 8
num_blocks = 1
units_per_block = 1
channels = 8
window = 4
heads = 2
mlp_ratio = 1.0
"""


@pytest.fixture
def tiny_run_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(TINY_RUN)
    return path


class TestLoadConfig:
    def test_preset_plus_overrides(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\npreset = desk\nseed = 7\nchannels = 18\n")
        cfg = load_config(path)
        assert cfg.seed == 7
        assert cfg.channels == 18
        assert cfg.lr_patch == 16  # untouched desk default

    def test_paper_preset(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\npreset = paper\n")
        assert load_config(path).channels == 180

    def test_no_preset_uses_defaults(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\nseed = 3\n")
        cfg = load_config(path)
        assert cfg == TrainConfig(seed=3)

    def test_type_coercion(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(
            "[run]\npreset = desk\nlr0 = 1e-3\naugment = false\n"
            "two_spec_sigmas = 0.4, 2.5\nmode = two_spec\n"
        )
        cfg = load_config(path)
        assert cfg.lr0 == 1e-3
        assert cfg.augment is False
        assert cfg.two_spec_sigmas == (0.4, 2.5)

    @pytest.mark.parametrize(
        "word,value",
        [("1", True), ("true", True), ("YES", True), ("on", True),
         ("0", False), ("False", False), ("no", False), ("OFF", False)],
    )
    def test_bool_words(self, tmp_path, word, value):
        path = tmp_path / "c.ini"
        path.write_text(f"[run]\npreset = desk\ndcl = {word}\n")
        assert load_config(path).dcl is value

    def test_sections_are_free_form(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[network]\nchannels = 18\n[data]\npreset = desk\nseed = 2\n")
        cfg = load_config(path)
        assert (cfg.channels, cfg.seed) == (18, 2)

    @pytest.mark.parametrize(
        "body",
        [
            "[run]\npreset = desk\nchanels = 18\n",  # typo must not be ignored
            "[a]\nseed = 1\n[b]\nseed = 2\n",  # duplicate across sections
            "[run]\npreset = workstation\n",
            "[run]\npreset = desk\nchannels = abc\n",
            "[run]\npreset = desk\ndcl = maybe\n",
            "[run]\npreset = desk\ntwo_spec_sigmas = 1,2,3\n",
            "[run]\npreset = desk\ntau = 0\n",  # fails validation
            "no section header\n",
        ],
    )
    def test_rejects(self, tmp_path, body):
        path = tmp_path / "c.ini"
        path.write_text(body)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")

    def test_programmatic_overrides_win(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\npreset = desk\nseed = 1\n")
        assert load_config(path, {"seed": 9}).seed == 9


class TestWriteResolved:
    def test_covers_every_field(self):
        import dataclasses

        cfg = TrainConfig.desk()
        names = {k for k, _ in config_items(cfg)}
        assert names == {f.name for f in dataclasses.fields(TrainConfig)}

    def test_roundtrip_reproduces_config(self, tmp_path):
        cfg = TrainConfig.desk(seed=5, mode="two_spec", two_spec_sigmas=(0.4, 2.5))
        path = tmp_path / "resolved.ini"
        write_resolved(cfg, path)
        assert load_config(path) == cfg


def make_hr_png(path, size=48, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.1, 0.9, size=(size, size, 3)).astype(np.float32)
    save_image(path, img)
    return path


class TestParser:
    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for name in ("degrade", "train-encoder", "train", "eval", "embed"):
            assert name in out

    def test_no_command_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_prog_name(self):
        assert build_parser().prog == "dsat"


class TestDegradeCommand:
    def test_isotropic_roundtrip(self, tmp_path, capsys):
        hr = make_hr_png(tmp_path / "hr.png")
        out = tmp_path / "lr.png"
        rc = main(
            ["degrade", "--input", str(hr), "--out", str(out),
             "--scale", "2", "--sigma", "1.0", "--seed", "3"]
        )
        assert rc == 0
        assert load_image(out).shape == (24, 24, 3)
        assert "wrote" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, tmp_path):
        hr = make_hr_png(tmp_path / "hr.png")
        args = ["degrade", "--input", str(hr), "--scale", "4",
                "--aniso", "2.0,0.5,0.6", "--noise", "10", "--seed", "7"]
        main(args + ["--out", str(tmp_path / "a.png")])
        main(args + ["--out", str(tmp_path / "b.png")])
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_seed_changes_noisy_output(self, tmp_path):
        hr = make_hr_png(tmp_path / "hr.png")
        base = ["degrade", "--input", str(hr), "--scale", "2",
                "--sigma", "1.0", "--noise", "15"]
        main(base + ["--seed", "1", "--out", str(tmp_path / "a.png")])
        main(base + ["--seed", "2", "--out", str(tmp_path / "b.png")])
        assert (tmp_path / "a.png").read_bytes() != (tmp_path / "b.png").read_bytes()

    def test_crops_to_scale_multiple(self, tmp_path):
        rng = np.random.default_rng(0)
        hr = tmp_path / "odd.png"
        save_image(hr, rng.uniform(size=(49, 50, 3)).astype(np.float32))
        out = tmp_path / "lr.png"
        rc = main(["degrade", "--input", str(hr), "--out", str(out),
                   "--scale", "2", "--sigma", "0.5"])
        assert rc == 0
        assert load_image(out).shape == (24, 25, 3)

    @pytest.mark.parametrize(
        "extra",
        [
            ["--sigma", "1.0", "--aniso", "1,1,0"],  # both blur options
            [],  # neither
            ["--aniso", "1.0,2.0"],  # wrong arity
            ["--aniso", "1.0,x,0.3"],
            ["--sigma", "9.0"],  # outside the x2 range
            ["--sigma", "1.0", "--noise", "30"],
        ],
    )
    def test_config_errors_exit_2(self, tmp_path, capsys, extra):
        hr = make_hr_png(tmp_path / "hr.png")
        rc = main(["degrade", "--input", str(hr), "--out",
                   str(tmp_path / "lr.png"), "--scale", "2"] + extra)
        assert rc == 2
        err = capsys.readouterr().err
        assert err.startswith("error: config:")
        assert err.count("\n") == 1

    def test_missing_input_exits_3(self, tmp_path, capsys):
        rc = main(["degrade", "--input", str(tmp_path / "nope.png"),
                   "--out", str(tmp_path / "lr.png"), "--scale", "2", "--sigma", "1.0"])
        assert rc == 3
        assert capsys.readouterr().err.startswith("error: data:")

    def test_undersized_input_exits_3(self, tmp_path, capsys):
        hr = tmp_path / "small.png"
        save_image(hr, np.full((8, 8, 3), 0.5, dtype=np.float32))
        rc = main(["degrade", "--input", str(hr), "--out",
                   str(tmp_path / "lr.png"), "--scale", "2", "--sigma", "1.0"])
        assert rc == 3


class TestTrainCommands:
    def test_joint_training_artifacts(self, tiny_run_config, tmp_path):
        out = tmp_path / "run"
        rc = main(["train", "--config", str(tiny_run_config), "--out", str(out)])
        assert rc == 0
        assert (out / "resolved_config.ini").exists()
        assert (out / "joint_metrics.csv").exists()
        assert (out / "joint_final.ckpt").exists()

    def test_encoder_then_joint_with_init(self, tiny_run_config, tmp_path):
        enc_out = tmp_path / "enc"
        rc = main(["train-encoder", "--config", str(tiny_run_config), "--out", str(enc_out)])
        assert rc == 0
        assert (enc_out / "encoder_final.ckpt").exists()
        joint_out = tmp_path / "joint"
        rc = main(["train", "--config", str(tiny_run_config), "--out", str(joint_out),
                   "--encoder-init", str(enc_out / "encoder_final.ckpt")])
        assert rc == 0
        assert (joint_out / "joint_final.ckpt").exists()

    def test_seed_flag_overrides_config(self, tiny_run_config, tmp_path):
        out = tmp_path / "run"
        main(["train", "--config", str(tiny_run_config), "--out", str(out), "--seed", "5"])
        resolved = (out / "resolved_config.ini").read_text()
        assert "seed = 5" in resolved
        assert load_config(out / "resolved_config.ini").seed == 5

    def test_rerun_reproduces_checkpoint(self, tiny_run_config, tmp_path):
        main(["train", "--config", str(tiny_run_config), "--out", str(tmp_path / "a")])
        main(["train", "--config", str(tiny_run_config), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "joint_final.ckpt").read_bytes() == (
            tmp_path / "b" / "joint_final.ckpt"
        ).read_bytes()

    def test_bad_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[run]\npreset = desk\nchanels = 18\n")
        rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "run")])
        assert rc == 2
        assert capsys.readouterr().err.startswith("error: config:")


class TestEvalAndEmbedCommands:
    @pytest.fixture
    def trained(self, tiny_run_config, tmp_path):
        out = tmp_path / "run"
        main(["train", "--config", str(tiny_run_config), "--out", str(out)])
        return tiny_run_config, out / "joint_final.ckpt"

    def test_eval_writes_report(self, trained, tmp_path, capsys):
        config, ckpt = trained
        out = tmp_path / "eval"
        rc = main(["eval", "--config", str(config), "--checkpoint", str(ckpt),
                   "--out", str(out)])
        assert rc == 0
        lines = (out / "eval_report.csv").read_text().strip().splitlines()
        assert lines[0] == "image,spec,psnr,ssim,psnr_bicubic,ssim_bicubic"
        assert "mean PSNR" in capsys.readouterr().out

    def test_eval_save_images(self, trained, tmp_path):
        config, ckpt = trained
        out = tmp_path / "eval"
        rc = main(["eval", "--config", str(config), "--checkpoint", str(ckpt),
                   "--out", str(out), "--save-images"])
        assert rc == 0
        assert (out / "sr_000.png").exists()

    def test_eval_rejects_encoder_only_checkpoint(self, tiny_run_config, tmp_path, capsys):
        enc_out = tmp_path / "enc"
        main(["train-encoder", "--config", str(tiny_run_config), "--out", str(enc_out)])
        rc = main(["eval", "--config", str(tiny_run_config),
                   "--checkpoint", str(enc_out / "encoder_final.ckpt"),
                   "--out", str(tmp_path / "eval")])
        assert rc == 3
        assert capsys.readouterr().err.startswith("error: data:")

    def test_embed_from_pngs(self, trained, tmp_path):
        config, ckpt = trained
        rng = np.random.default_rng(0)
        patches = []
        for i in range(2):
            p = tmp_path / f"patch{i}.png"
            save_image(p, rng.uniform(size=(8, 8, 3)).astype(np.float32))
            patches.append(str(p))
        out = tmp_path / "emb.csv"
        rc = main(["embed", "--config", str(config), "--checkpoint", str(ckpt),
                   "--input"] + patches + ["--out", str(out)])
        assert rc == 0
        rows = [line.split(",") for line in out.read_text().strip().splitlines()]
        assert len(rows) == 2
        emb = np.array(rows, dtype=np.float64)
        assert emb.shape == (2, 256)
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-5)

    def test_embed_from_manifest(self, trained, tmp_path):
        config, ckpt = trained
        rng = np.random.default_rng(1)
        img = tmp_path / "p.png"
        save_image(img, rng.uniform(size=(8, 8, 3)).astype(np.float32))
        manifest = tmp_path / "list.txt"
        manifest.write_text("p.png\n")
        out = tmp_path / "emb.csv"
        rc = main(["embed", "--config", str(config), "--checkpoint", str(ckpt),
                   "--input", str(manifest), "--out", str(out)])
        assert rc == 0
        assert len(out.read_text().strip().splitlines()) == 1
