import json
import subprocess
import sys

import numpy as np
import pytest

from dualspec import freq, io, metrics, synthetic
from dualspec.cli import load_run_config, main
from dualspec.errors import ConfigError, FormatError
from dualspec.network import NetConfig, count_params, init_params, zero_params

DESK_DOC = {"channels": 8, "blocks_pre": 1, "blocks_post": 1, "groups": 2, "in_channels": 4}


@pytest.fixture
def files(tmp_path):
    cube = synthetic.smooth_cube(12, 12, 4, seed=1)
    mask = synthetic.random_mask(12, 12, seed=2)
    io.write_hsc(tmp_path / "cube.hsc", cube)
    io.write_hsc(tmp_path / "mask.hsc", mask)
    return tmp_path, cube, mask


def run(*argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------- config documents


def test_run_config_split():
    net, cfg = load_run_config({**DESK_DOC, "lambda": 0.3, "steps": 7})
    assert net == NetConfig.desk()
    assert cfg.lam == 0.3 and cfg.steps == 7


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"channels": "8"}, {"channels": 8.5}, {"steps": "many"}, {"lambda": 1, "lam": 1}])
def test_run_config_malformed(doc):
    with pytest.raises(FormatError):
        load_run_config(doc)


def test_run_config_inconsistent():
    with pytest.raises(ConfigError):
        load_run_config({"channels": 6, "groups": 4})


# ---------------------------------------------------------------- simulate


def test_simulate_dims(files, capsys):
    d, cube, mask = files
    assert run("simulate", "--cube", d / "cube.hsc", "--mask", d / "mask.hsc", "--step", 2, "--out", d / "m.hsc") == 0
    meas = io.read_hsc(d / "m.hsc")
    assert meas.shape == (12, 18, 1)
    assert "12x18x1" in capsys.readouterr().out


def test_simulate_step_zero(files):
    d, cube, _ = files
    run("simulate", "--cube", d / "cube.hsc", "--mask", d / "mask.hsc", "--step", 0, "--out", d / "m.hsc")
    assert io.read_hsc(d / "m.hsc").shape == (12, 12, 1)


def test_simulate_with_noise_is_seeded(files):
    d, _, _ = files
    for name in ("a", "b"):
        run("simulate", "--cube", d / "cube.hsc", "--mask", d / "mask.hsc", "--out", d / f"{name}.hsc", "--shot-noise-bits", 11, "--seed", 3)
    assert (d / "a.hsc").read_bytes() == (d / "b.hsc").read_bytes()


def test_simulate_bad_magic(files, capsys):
    d, _, _ = files
    (d / "bad.hsc").write_bytes(b"NOPE" + (d / "cube.hsc").read_bytes()[4:])
    assert run("simulate", "--cube", d / "bad.hsc", "--mask", d / "mask.hsc", "--out", d / "m.hsc") == 2
    assert "bad magic" in capsys.readouterr().err


def test_simulate_dimension_mismatch(files, capsys):
    d, _, _ = files
    io.write_hsc(d / "wide.hsc", np.ones((12, 13)))
    assert run("simulate", "--cube", d / "cube.hsc", "--mask", d / "wide.hsc", "--out", d / "m.hsc") == 3
    assert "width" in capsys.readouterr().err


# ---------------------------------------------------------------- train and infer


def write_config(path, **extra):
    doc = {**DESK_DOC, "patch_size": 12, "steps": 20, "lr0": 5e-3, "patches": 4, "use_patch_fdl": True, "augment": False, **extra}
    path.write_text(json.dumps(doc))
    return path


def test_train_then_infer(files):
    d, cube, mask = files
    data = d / "data"
    data.mkdir()
    io.write_hsc(data / "scene.hsc", cube)
    cfg = write_config(d / "cfg.json")
    assert run("train", "--config", cfg, "--data", data, "--mask", d / "mask.hsc", "--out", d / "a.ckpt", "--log", d / "a.csv") == 0
    assert run("train", "--config", cfg, "--data", data, "--mask", d / "mask.hsc", "--out", d / "b.ckpt", "--log", d / "b.csv") == 0
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()
    assert (d / "a.ckpt").read_bytes() == (d / "b.ckpt").read_bytes()
    log = io.read_log_csv(d / "a.csv")
    assert len(log) == 20 and log[-1]["total"] < log[0]["total"]

    run("simulate", "--cube", d / "cube.hsc", "--mask", d / "mask.hsc", "--out", d / "m.hsc")
    assert run("infer", "--ckpt", d / "a.ckpt", "--meas", d / "m.hsc", "--mask", d / "mask.hsc", "--out", d / "rec.hsc") == 0
    rec = io.read_hsc(d / "rec.hsc")
    assert rec.shape == (12, 12, 4)
    assert rec.min() >= 0 and rec.max() <= 1


def test_train_empty_dir(files, capsys):
    d, _, _ = files
    (d / "empty").mkdir()
    code = run("train", "--config", write_config(d / "cfg.json"), "--data", d / "empty", "--mask", d / "mask.hsc", "--out", d / "x.ckpt")
    assert code == 3
    assert "no training cubes" in capsys.readouterr().err


def test_train_non_finite_exit_4(files, capsys):
    d, _, _ = files
    data = d / "data"
    data.mkdir()
    io.write_hsc(data / "s.hsc", synthetic.smooth_cube(12, 12, 4))
    cfg = write_config(d / "cfg.json", lr0=1e300, steps=5)
    with np.errstate(all="ignore"):
        code = run("train", "--config", cfg, "--data", data, "--mask", d / "mask.hsc", "--out", d / "x.ckpt")
    assert code == 4
    assert "non-finite loss at step" in capsys.readouterr().err


def test_infer_zero_checkpoint(files):
    d, cube, mask = files
    net = NetConfig.desk()
    io.write_checkpoint(d / "z.ckpt", zero_params(net), io.checkpoint_document(net, 2.0, 0.7, 3, 0))
    run("simulate", "--cube", d / "cube.hsc", "--mask", d / "mask.hsc", "--out", d / "m.hsc")
    assert run("infer", "--ckpt", d / "z.ckpt", "--meas", d / "m.hsc", "--mask", d / "mask.hsc", "--out", d / "r.hsc") == 0
    rec = io.read_hsc(d / "r.hsc")
    assert rec.shape == (12, 12, 4) and not rec.any()


def test_infer_band_mismatch(files):
    d, _, _ = files
    net = NetConfig(channels=8, blocks_pre=1, blocks_post=1, groups=2, in_channels=3)
    io.write_checkpoint(d / "c.ckpt", init_params(net), io.checkpoint_document(net, 2.0, 0.7, 3, 0))
    run("simulate", "--cube", d / "cube.hsc", "--mask", d / "mask.hsc", "--step", 3, "--out", d / "m.hsc")
    # 12 + 3*3 columns is not 12 + d*(3-1) for any integer d
    assert run("infer", "--ckpt", d / "c.ckpt", "--meas", d / "m.hsc", "--mask", d / "mask.hsc", "--out", d / "r.hsc") == 3


def test_infer_row_mismatch(files):
    d, _, _ = files
    net = NetConfig.desk()
    io.write_checkpoint(d / "c.ckpt", init_params(net), io.checkpoint_document(net, 2.0, 0.7, 3, 0))
    io.write_hsc(d / "m.hsc", np.ones((11, 18)))
    assert run("infer", "--ckpt", d / "c.ckpt", "--meas", d / "m.hsc", "--mask", d / "mask.hsc", "--out", d / "r.hsc") == 3


# ---------------------------------------------------------------- eval


def test_eval_identical(files):
    d, _, _ = files
    assert run("eval", "--pred", d / "cube.hsc", "--gt", d / "cube.hsc", "--out", d / "r.json") == 0
    doc = json.loads((d / "r.json").read_text())
    assert list(doc) == ["psnr", "ssim", "lfd"]
    assert doc["psnr"] == 100.0 and doc["ssim"] == pytest.approx(1.0, abs=1e-9) and doc["lfd"] == 0.0


def test_eval_subset(files):
    d, _, _ = files
    run("eval", "--pred", d / "cube.hsc", "--gt", d / "cube.hsc", "--metrics", "psnr", "--out", d / "r.json")
    assert json.loads((d / "r.json").read_text()) == {"psnr": 100.0}


def test_eval_matches_modules(files):
    d, cube, _ = files
    noisy = np.clip(cube + np.random.default_rng(0).normal(scale=0.05, size=cube.shape), 0, 1).astype(np.float32)
    io.write_hsc(d / "noisy.hsc", noisy)
    run("eval", "--pred", d / "noisy.hsc", "--gt", d / "cube.hsc", "--out", d / "r.json")
    doc = json.loads((d / "r.json").read_text())
    gt = io.read_hsc(d / "cube.hsc")
    pred = noisy.astype(np.float64)
    assert doc["psnr"] == pytest.approx(metrics.psnr(gt, pred), rel=1e-12)
    assert doc["ssim"] == pytest.approx(metrics.ssim(gt, pred), rel=1e-12)
    assert doc["lfd"] == pytest.approx(freq.lfd(gt, pred), rel=1e-12)


def test_eval_shape_mismatch(files):
    d, _, _ = files
    io.write_hsc(d / "small.hsc", np.zeros((12, 11, 4)))
    assert run("eval", "--pred", d / "small.hsc", "--gt", d / "cube.hsc", "--out", d / "r.json") == 3


def test_eval_unknown_metric(files):
    d, _, _ = files
    assert run("eval", "--pred", d / "cube.hsc", "--gt", d / "cube.hsc", "--metrics", "mse", "--out", d / "r.json") == 2


# ---------------------------------------------------------------- spectrum


def test_spectrum_constant_channel(tmp_path):
    io.write_hsc(tmp_path / "c.hsc", np.full((6, 8, 2), 0.5))
    assert run("spectrum", "--cube", tmp_path / "c.hsc", "--channel", 1, "--out", tmp_path / "s.pgm") == 0
    img = io.read_pgm(tmp_path / "s.pgm")
    assert img.shape == (6, 8)
    assert img[3, 4] == 255 and np.count_nonzero(img) == 1


def test_spectrum_sinusoid_symmetric(tmp_path):
    x = np.arange(16)
    wave = 0.5 + 0.4 * np.cos(2 * np.pi * 3 * x / 16)
    io.write_hsc(tmp_path / "c.hsc", np.broadcast_to(wave[None, :, None], (16, 16, 1)))
    run("spectrum", "--cube", tmp_path / "c.hsc", "--channel", 0, "--out", tmp_path / "s.pgm")
    img = io.read_pgm(tmp_path / "s.pgm")
    row = img[8]
    assert row[8] == 255
    assert row[8 - 3] == row[8 + 3] > 0
    assert np.count_nonzero(img) == 3


def test_spectrum_channel_out_of_range(tmp_path):
    io.write_hsc(tmp_path / "c.hsc", np.zeros((4, 4, 2)))
    assert run("spectrum", "--cube", tmp_path / "c.hsc", "--channel", 2, "--out", tmp_path / "s.pgm") == 3


# ---------------------------------------------------------------- params


def test_params_full_and_desk(tmp_path, capsys):
    (tmp_path / "full.json").write_text("{}")
    (tmp_path / "desk.json").write_text(json.dumps(DESK_DOC))
    run("params", "--config", tmp_path / "full.json")
    run("params", "--config", tmp_path / "desk.json")
    full, desk = map(int, capsys.readouterr().out.split())
    assert 2.1e6 <= full <= 2.7e6
    assert desk == 3785 == count_params(NetConfig.desk())


def test_params_malformed(tmp_path):
    (tmp_path / "bad.json").write_text("{channels: 8")
    assert run("params", "--config", tmp_path / "bad.json") == 2


def test_console_script_entry(tmp_path):
    (tmp_path / "desk.json").write_text(json.dumps(DESK_DOC))
    out = subprocess.run(
        [sys.executable, "-m", "dualspec.cli", "params", "--config", str(tmp_path / "desk.json")],
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "3785"
