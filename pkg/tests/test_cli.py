import json
import struct

import numpy as np
import pytest

from latentforge.cli import EXIT_CONFIG, EXIT_INJECTION, EXIT_NUMERIC, exit_code, main, parse_alphas
from latentforge.errors import InjectionMiss, NumericError, StageError
from latentforge.grid import grid_read, grid_write
from latentforge.maskgen import mask_read_pgm


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schedule": {"T": 10}, "t_R_range": [3, 8], "output_dir": str(tmp_path / "out")}))
    return path


def test_parse_alphas():
    assert parse_alphas("0,0.2,...,1") == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert parse_alphas("0.5, 1") == [0.5, 1.0]


def test_invert_and_reconstruct(config, tmp_path, capsys):
    assert main(["invert", "--config", str(config)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["maps_shape"] == [16, 16, 3, 10] and np.load(out["maps"]).shape == (16, 16, 3, 10)
    assert grid_read(out["z_T"]).shape == (4, 64, 64)
    assert main(["reconstruct", "--config", str(config)]) == 0
    assert json.loads(capsys.readouterr().out)["metrics"]["psnr"] > 20


def test_edit_writes_report(config, tmp_path, capsys):
    assert main(["edit", "--config", str(config)]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert 3 <= report["t_R"] <= 8
    assert (tmp_path / "out" / "mask.pgm").exists()


def test_sweep_freq_csv(config, tmp_path, capsys):
    assert main(["sweep-freq", "--config", str(config), "--alphas", "0,0.5,1", "--out", str(tmp_path / "s.csv")]) == 0
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "band,alpha,psnr_db,mse,ssim" and len(lines) == 7


def test_sweep_mask(config, tmp_path, capsys):
    rects = tmp_path / "r.json"
    rects.write_text(json.dumps([{"x0": 0, "y0": 0, "x1": 32, "y1": 32}]))
    assert main(["sweep-mask", "--config", str(config), "--rects", str(rects)]) == 0
    assert json.loads(capsys.readouterr().out)["runs"][0]["area_ratio"] == 0.25


def test_make_mask_and_metrics(config, tmp_path, capsys):
    m = tmp_path / "m.pgm"
    assert main(["make-mask", "--config", str(config), "--mode", "rect", "--rect", "0,0,32,32", "--out", str(m)]) == 0
    assert mask_read_pgm(m).area_edit == 1024
    assert main(["make-mask", "--config", str(config), "--mode", "attention", "--out", str(tmp_path / "a.pgm")]) == 0
    capsys.readouterr()
    assert main(["invert", "--config", str(config)]) == 0
    z = json.loads(capsys.readouterr().out)["z_T"]
    assert main(["metrics", "--a", z, "--b", z, "--mask", str(m)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["whole"]["psnr"] == 99.0 and rep["masked"]["mse"] == 0.0


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"cfg_source": 3}))
    assert main(["edit", "--config", str(bad)]) == EXIT_CONFIG
    nan = tmp_path / "nan.flxl"
    nan.write_bytes(struct.pack("<4sIIII", b"FLXL", 1, 1, 1, 1) + struct.pack("<f", float("nan")))
    # a non-finite payload is a corrupt file, not a failed computation
    assert main(["metrics", "--a", str(nan), "--b", str(nan)]) == EXIT_CONFIG
    assert main(["metrics", "--a", str(tmp_path / "none.flxl"), "--b", str(nan)]) == EXIT_CONFIG
    assert exit_code(StageError("retarget", InjectionMiss(4, "dec"))) == EXIT_INJECTION
    assert exit_code(NumericError("x")) == EXIT_NUMERIC
