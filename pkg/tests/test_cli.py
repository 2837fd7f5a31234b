import math

import numpy as np
import pytest

from tsdf4d import synth
from tsdf4d.cli import build_parser, main
from tsdf4d.evaluation import parse_key_values
from tsdf4d.field import load_checkpoint
from tsdf4d.mesher import SliceGrid, read_ply

QUICK = ["--set", "train_steps=15", "--set", "batch_size=256", "--set", "basis_count=4"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = synth.SceneSpec(azimuth_count=72, elevation_count=6, frames=6,
                           movers=[synth.Mover("sphere", [0.5], [5.0, 5.0, 1.5], [0.1, 0, 0])])
    (root / "scene.json").write_text(spec.to_json())
    assert main(["synth", "--scene", str(root / "scene.json"), "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "m.ckpt"), "--seed", "7",
                 "--deterministic"] + QUICK) == 0
    return root


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    for cmd in ("synth", "train", "mesh", "slice", "segment", "eval"):
        assert main([cmd, "--help"]) == 0
    assert "--at-frame" in capsys.readouterr().out


def test_usage_errors_exit_one():
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["mesh", "--bogus"]) == 1
    assert main(["mesh", "--checkpoint", "x", "--out", "y", "--static", "--at-frame", "1"]) == 1


def test_data_errors_exit_two(tmp_path):
    assert main(["mesh", "--checkpoint", str(tmp_path / "missing.ckpt"), "--out", str(tmp_path / "m.ply")]) == 2
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    assert main(["mesh", "--checkpoint", str(tmp_path / "bad.ckpt"), "--out", str(tmp_path / "m.ply")]) == 2
    (tmp_path / "data" / "velodyne").mkdir(parents=True)
    (tmp_path / "data" / "velodyne" / "000000.bin").write_bytes(b"\0" * 15)
    (tmp_path / "data" / "poses.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    assert main(["train", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "m.ckpt")]) == 2


def test_unknown_override_key_is_data_error(dataset, tmp_path):
    rc = main(["train", "--data", str(dataset / "data"), "--out", str(tmp_path / "x.ckpt"), "--set", "nope=1"])
    assert rc == 2


def test_config_precedence_three_layers(dataset, tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("truncation = 0.4\nd_static = 0.2\nbasis_count = 4\n")
    out = tmp_path / "p.ckpt"
    rc = main(["train", "--data", str(dataset / "data"), "--out", str(out), "--config", str(cfg_file),
               "--set", "d_static=0.25", "--set", "train_steps=2", "--set", "batch_size=64", "--seed", "3"])
    assert rc == 0
    cfg = load_checkpoint(out).cfg
    assert cfg.truncation == 0.4           # file beats default
    assert cfg.d_static == 0.25            # override beats file
    assert cfg.seed == 3                   # flag beats everything
    assert cfg.learning_rate == 0.01       # default survives
    assert (tmp_path / "p.ckpt.losses.csv").read_text().startswith("step,l_surf,l_eik,l_free,l_certain,total,eps")


def test_mesh_static_and_at_frame(dataset, tmp_path):
    assert main(["mesh", "--checkpoint", str(dataset / "m.ckpt"), "--out", str(tmp_path / "s.ply")]) == 0
    assert main(["mesh", "--checkpoint", str(dataset / "m.ckpt"), "--out", str(tmp_path / "t.ply"),
                 "--at-frame", "2", "--encoding", "ascii"]) == 0
    read_ply(tmp_path / "s.ply")
    read_ply(tmp_path / "t.ply")
    assert main(["mesh", "--checkpoint", str(dataset / "m.ckpt"), "--out", str(tmp_path / "u.ply"),
                 "--at-frame", "99"]) == 1


def test_slice(dataset, tmp_path):
    assert main(["slice", "--checkpoint", str(dataset / "m.ckpt"), "--out", str(tmp_path / "s.csv"),
                 "--coord", "1.5"]) == 0
    g = SliceGrid.from_csv((tmp_path / "s.csv").read_text())
    assert g.clamp == 0.3 and np.abs(g.values).max() <= 0.3
    assert main(["slice", "--checkpoint", str(dataset / "m.ckpt"), "--out", str(tmp_path / "s.csv"),
                 "--coord", "1.5", "--clamp", "0"]) == 1


def test_segment_report(dataset, tmp_path, capsys):
    assert main(["segment", "--checkpoint", str(dataset / "m.ckpt"), "--data", str(dataset / "data"),
                 "--out", str(tmp_path / "seg")]) == 0
    kv = parse_key_values((tmp_path / "seg" / "seg_report.txt").read_text())
    assert abs(kv["AA"] - math.sqrt(kv["SA"] * kv["DA"])) <= 1e-9
    assert len(list((tmp_path / "seg").glob("*.label"))) == 6
    assert "SA" in capsys.readouterr().out


def test_eval(dataset, tmp_path):
    mesh = tmp_path / "s.ply"
    assert main(["mesh", "--checkpoint", str(dataset / "m.ckpt"), "--out", str(mesh)]) == 0
    if len(read_ply(mesh)) == 0:
        pytest.skip("quick model produced no surface")
    rc = main(["eval", "--mesh", str(mesh), "--gt", str(dataset / "data" / "gt_static.ply"),
               "--out", str(tmp_path / "r.txt"), "--density", "200"])
    assert rc == 0
    text = (tmp_path / "r.txt").read_text()
    assert "threshold 1 cm" in text and "threshold 20 cm" in text


def test_deterministic_runs_bit_identical(dataset, tmp_path):
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["train", "--data", str(dataset / "data"), "--out", str(d / "m.ckpt"), "--seed", "7",
                     "--deterministic"] + QUICK) == 0
        assert main(["mesh", "--checkpoint", str(d / "m.ckpt"), "--out", str(d / "m.ply"), "--deterministic"]) == 0
    for f in ("m.ckpt", "m.ckpt.losses.csv", "m.ply"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "m.ckpt").read_bytes() == (dataset / "m.ckpt").read_bytes()


def test_every_subcommand_has_common_flags():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        opts = {s for a in p._actions for s in a.option_strings}
        assert {"--config", "--set", "--seed", "--deterministic", "--workers"} <= opts, name
