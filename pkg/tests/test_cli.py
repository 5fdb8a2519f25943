import csv
import io

import numpy as np
import pytest

from dehazekit import cli, imageio, metrics, trainer

TRAIN_FLAGS = ["--steps", "3", "--crop", "16", "--batch", "2", "--channels", "4", "--blocks", "1"]


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(root), "--count", "6", "--size", "32", "--seed", "1"]) == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "m.dhz"
    assert cli.main(["train", "--data", str(dataset), "--out", str(out), "--holdout", "2"] + TRAIN_FLAGS) == 0
    return out


def test_synth_layout(dataset):
    for sub in ("clean", "hazy", "depth"):
        assert len(list((dataset / sub).glob("*.ppm"))) == 6
    rows = imageio.load_manifest(dataset / "manifest.txt")
    assert len(rows) == 6
    assert all(0.3 <= r.beta <= 1.0 and 0.8 <= r.airlight <= 1.0 for r in rows)
    assert imageio.read_image(dataset / rows[0].hazy).shape == (1, 3, 32, 32)


def test_synth_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run(["synth", "--out", tmp_path / d, "--count", "3", "--size", "16", "--seed", "7",
                    "--format", "png", "--beta-min", "0.5", "--beta-max", "0.6"]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 10
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert all(0.5 <= r.beta <= 0.6 for r in imageio.load_manifest(tmp_path / "a" / "manifest.txt"))


def test_train_outputs(checkpoint):
    hist = trainer.history_from_csv(checkpoint.with_suffix(".loss.csv").read_text())
    assert len(hist) == 3
    assert checkpoint.with_suffix(".loss.png").read_bytes()[:4] == b"\x89PNG"
    _, cfg = trainer.load_checkpoint(checkpoint)
    assert (cfg.steps, cfg.channels, cfg.crop) == (3, 4, 16)


def test_train_config_file_and_flag_precedence(dataset, tmp_path):
    conf = tmp_path / "train.conf"
    conf.write_text("# toy settings\nchannels = 4\nblocks=1\nlambda-color = 0.5\ncrop = 16\nbatch = 2\nlr = 0.5\n")
    out = tmp_path / "m.dhz"
    assert run(["train", "--data", dataset, "--out", out, "--config", conf, "--lr", "0.001", "--epochs", "1",
                "--no-plot", "--no-dwsc"]) == 0
    _, cfg = trainer.load_checkpoint(out)
    assert cfg.lambda_color == 0.5 and cfg.lr == 0.001 and cfg.use_dwsc is False
    assert cfg.steps == 2   # one pass over 3 hazy images in batches of 2
    assert not out.with_suffix(".loss.png").exists()


@pytest.mark.parametrize("extra,kind,code", [
    (["--wavelet", "sym4"], "usage", 2),
    (["--crop", "7"], "contract", 3),
    (["--lr", "-1"], "contract", 3),
])
def test_train_rejects_bad_config(dataset, tmp_path, capsys, extra, kind, code):
    assert run(["train", "--data", dataset, "--out", tmp_path / "x.dhz"] + TRAIN_FLAGS + extra) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"dehazekit: error[{kind}]:")


def test_train_error_paths(dataset, tmp_path, capsys):
    assert run(["train", "--data", tmp_path, "--out", tmp_path / "x.dhz"]) == 6
    assert "manifest not found" in capsys.readouterr().err
    (tmp_path / "manifest.txt").write_text("a\tb\tc\tzero\t1\n")
    assert run(["train", "--data", tmp_path, "--out", tmp_path / "x.dhz"]) == 6
    assert "manifest.txt:1:" in capsys.readouterr().err
    conf = tmp_path / "bad.conf"
    conf.write_text("colour = 3\n")
    assert run(["train", "--data", dataset, "--out", tmp_path / "x.dhz", "--config", conf]) == 2
    assert "unknown config key 'colour'" in capsys.readouterr().err


def test_dehaze_single_and_directory(dataset, checkpoint, tmp_path):
    src = dataset / "hazy" / "scene_0000.ppm"
    assert run(["dehaze", "--checkpoint", checkpoint, "--input", src, "--output", tmp_path / "one.png"]) == 0
    assert imageio.read_image(tmp_path / "one.png").shape == (1, 3, 32, 32)
    assert run(["dehaze", "--checkpoint", checkpoint, "--input", dataset / "hazy", "--output", tmp_path / "all"]) == 0
    assert len(list((tmp_path / "all").glob("*.ppm"))) == 6
    again = tmp_path / "again"
    assert run(["dehaze", "--checkpoint", checkpoint, "--input", dataset / "hazy", "--output", again]) == 0
    for p in (tmp_path / "all").iterdir():
        assert p.read_bytes() == (again / p.name).read_bytes()


@pytest.mark.parametrize("h,w", [(17, 23), (5, 9), (2, 2)])
def test_dehaze_keeps_odd_sizes(checkpoint, tmp_path, h, w):
    x = np.random.default_rng(h).uniform(size=(1, 3, h, w))
    imageio.write_image(tmp_path / "in.ppm", x)
    assert run(["dehaze", "--checkpoint", checkpoint, "--input", tmp_path / "in.ppm",
                "--output", tmp_path / "out.ppm"]) == 0
    assert imageio.read_image(tmp_path / "out.ppm").shape == (1, 3, h, w)


def test_dehaze_errors(tmp_path, checkpoint, capsys):
    assert run(["dehaze", "--checkpoint", tmp_path / "nope.dhz", "--input", "x", "--output", "y"]) == 7
    (tmp_path / "broken.ppm").write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    assert run(["dehaze", "--checkpoint", checkpoint, "--input", tmp_path / "broken.ppm",
                "--output", tmp_path / "o.ppm"]) == 5
    capsys.readouterr()


def test_eval_identical_directories(dataset, tmp_path, capsys):
    out = tmp_path / "res" / "eval.csv"
    assert run(["eval", "--pred", dataset / "clean", "--ref", dataset / "clean", "--out", out]) == 0
    table = capsys.readouterr().out
    assert table.strip().splitlines()[-1].split()[0] == "mean"
    rows = metrics.reports_from_csv(out.read_text())
    assert len(rows) == 6
    for _, r in rows:
        assert (r.psnr, r.ssim, r.ciede2000, r.diff_r, r.diff_g, r.diff_b) == (100.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    assert out.with_suffix(".txt").read_text().strip() == table.strip()


def test_eval_lists_unmatched_files(dataset, tmp_path, capsys):
    for name in ("scene_0000.ppm", "extra.ppm"):
        (tmp_path / name).write_bytes((dataset / "clean" / "scene_0000.ppm").read_bytes())
    assert run(["eval", "--pred", tmp_path, "--ref", dataset / "clean"]) == 3
    err = capsys.readouterr().err
    assert "extra" in err and "scene_0005" in err


def test_analyze_outputs(dataset, tmp_path, capsys):
    hz, cl = dataset / "hazy" / "scene_0001.ppm", dataset / "clean" / "scene_0001.ppm"
    out = tmp_path / "an"
    assert run(["analyze", "--hazy", hz, "--dehazed", hz, "--clean", cl, "--out", out, "--bins", "16"]) == 0
    capsys.readouterr()
    rows = list(csv.DictReader(io.StringIO((out / "channel_diff.csv").read_text())))
    assert [r["method"] for r in rows] == ["hazy", "dehazed", "clean"]
    assert all(float(rows[2][c]) == 0 for c in "RGB")
    assert rows[0] == dict(rows[1], method="hazy")
    for name in ("hazy", "dehazed", "clean"):
        hist = list(csv.DictReader(io.StringIO((out / f"histogram_{name}.csv").read_text())))
        assert len(hist) == 16
        for c in "RGB":
            assert sum(int(r[c]) for r in hist) == 32 * 32
    for png in ("histograms.png", "channel_diff.png"):
        assert (out / png).read_bytes()[:4] == b"\x89PNG"


def test_analyze_size_mismatch(dataset, tmp_path, capsys):
    small = tmp_path / "small.ppm"
    imageio.write_image(small, np.zeros((1, 3, 8, 8)))
    hz = dataset / "hazy" / "scene_0001.ppm"
    assert run(["analyze", "--hazy", hz, "--dehazed", small, "--clean", hz, "--out", tmp_path]) == 3
    assert capsys.readouterr().err.count("\n") == 1


def test_usage_errors(capsys):
    assert run(["bogus"]) == 2
    assert run([]) == 2
    assert capsys.readouterr().err.startswith("dehazekit: error[usage]:")


def test_console_script_entry_point():
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "dehazekit.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
