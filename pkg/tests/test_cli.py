import subprocess
import sys

import numpy as np
import pytest

from hwformer.checkpoint import load_checkpoint, save_checkpoint
from hwformer.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run
from hwformer.data import synthetic_textures, write_dataset
from hwformer.imageio import ImageBuffer, read_image, write_image
from hwformer.model import ModelWeights, conv_flops, preset


@pytest.fixture
def zero_ckpt(tmp_path):
    path = tmp_path / "zero.hwf"
    save_checkpoint(path, ModelWeights.zeros(preset("toy")))
    return path


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return err[-1]


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as info:
        run(["--help"])
    assert info.value.code == 0
    assert "selftest" in capsys.readouterr().out


def test_unknown_flag(capsys):
    assert run(["bench", "--bogus"]) == EXIT_USAGE
    assert error_line(capsys).startswith("hwformer: error=usage reason=")


def test_missing_command(capsys):
    assert run([]) == EXIT_USAGE


def test_selftest(capsys):
    assert run(["selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 8


def test_bench_csv(capsys):
    assert run(["bench", "--format", "csv"]) == EXIT_OK
    captured = capsys.readouterr()
    lines = captured.out.strip().splitlines()
    assert lines[0] == "window,patch,image,params,flops_total,flops_attention,flops_conv"
    rows = [list(map(int, l.split(","))) for l in lines[1:]]
    assert [r[0] for r in rows] == [4, 6, 8, 48, 96]
    attention = [r[5] for r in rows]
    assert attention == sorted(attention)
    assert all(r[6] == conv_flops(96, 96, 64, 64) for r in rows)
    assert "# model.base_channels=64" in captured.err


def test_bench_custom_windows(capsys):
    assert run(["bench", "--preset", "toy", "--windows", "4,8", "--image", "16,32"]) == EXIT_OK
    assert len(capsys.readouterr().out.strip().splitlines()) == 5


def test_denoise_zero_model_is_identity(tmp_path, zero_ckpt, rng):
    src = tmp_path / "in.pgm"
    img = ImageBuffer(rng.integers(0, 256, (30, 41, 1), dtype=np.uint8))
    write_image(img, src)
    out = tmp_path / "out.pgm"
    assert run(["denoise", str(src), "--checkpoint", str(zero_ckpt), "--out", str(out), "--tile", "16", "--overlap", "4"]) == EXIT_OK
    np.testing.assert_array_equal(read_image(out).data, img.data)


def test_denoise_directory(tmp_path, zero_ckpt):
    write_dataset(synthetic_textures(2, 20, seed=1), tmp_path / "in")
    assert run(["denoise", str(tmp_path / "in"), "--checkpoint", str(zero_ckpt), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == sorted(p.name for p in (tmp_path / "in").iterdir())


def test_missing_checkpoint(tmp_path, capsys):
    assert run(["denoise", "x.pgm", "--checkpoint", str(tmp_path / "none.hwf"), "--out", "y.pgm"]) == EXIT_DATA
    assert "error=data" in error_line(capsys)


def test_eval_csv(tmp_path, zero_ckpt, capsys):
    write_dataset(synthetic_textures(3, 24, seed=1), tmp_path / "ds")
    report = tmp_path / "r.csv"
    assert run(["eval", str(tmp_path / "ds"), "--checkpoint", str(zero_ckpt), "--sigma", "15",
                "--format", "csv", "--out", str(report)]) == EXIT_OK
    lines = report.read_text().splitlines()
    assert len(lines) == 4
    assert all(l.split(",")[1] == "15" for l in lines[1:])


def test_train_with_config_file(tmp_path, capsys):
    write_dataset(synthetic_textures(4, 20, seed=1), tmp_path / "ds")
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# short run\ntrain.epochs=2\ntrain.patches_per_image=2\nmodel.heads=2\n")
    out = tmp_path / "m.hwf"
    code = run(["train", str(tmp_path / "ds"), "--out", str(out), "--config", str(cfg),
                "--max-steps", "2", "--threads", "1"])
    assert code == EXIT_OK
    err = capsys.readouterr().err
    assert "# train.epochs=2" in err and "# train.max_steps=2" in err
    weights, state, sections = load_checkpoint(out)
    assert state.t == 2 and sections["train"]["epochs"] == 2
    assert (tmp_path / "m.hwf.log").exists()


def test_flag_overrides_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model.tde_window=8\n")
    assert run(["bench", "--preset", "toy", "--config", str(cfg), "--set", "model.base_channels=16"]) == EXIT_OK
    assert "# model.base_channels=16" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["model.nonsense=1\n", "model.heads=2\nmodel.heads=4\n", "heads=2\n"])
def test_bad_config_file(tmp_path, capsys, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert run(["bench", "--config", str(cfg)]) == EXIT_USAGE


def test_set_conflicts_with_flag(tmp_path, capsys):
    assert run(["train", str(tmp_path), "--out", "x", "--sigma", "25", "--set", "train.sigma=15"]) == EXIT_USAGE


def test_invalid_value(capsys):
    assert run(["bench", "--set", "model.heads=3"]) == EXIT_USAGE


def test_console_module():
    proc = subprocess.run([sys.executable, "-m", "hwformer.cli", "bench", "--preset", "toy", "--windows", "8"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "window" in proc.stdout
