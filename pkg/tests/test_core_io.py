import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsdf4d import core_io
from tsdf4d.core_io import FormatError, MapConfig, Pose


def _bin(path, records):
    path.write_bytes(b"".join(struct.pack("<4f", *r) for r in records))
    return path


def test_load_scan_bin_single_record(tmp_path):
    pts = core_io.load_scan_bin(_bin(tmp_path / "a.bin", [(1.0, 2.0, 3.0, 0.5)]))
    np.testing.assert_array_equal(pts, [[1.0, 2.0, 3.0]])


def test_load_scan_bin_empty(tmp_path):
    (tmp_path / "e.bin").write_bytes(b"")
    assert core_io.load_scan_bin(tmp_path / "e.bin").shape == (0, 3)


def test_load_scan_bin_rejects_nan_record(tmp_path):
    path = _bin(tmp_path / "n.bin", [(1.0, 2.0, 3.0, 0.0), (4.0, float("nan"), 6.0, 0.0)])
    with pytest.warns(UserWarning, match="1 non-finite"):
        pts = core_io.load_scan_bin(path)
    np.testing.assert_array_equal(pts, [[1.0, 2.0, 3.0]])


def test_load_scan_bin_bad_size(tmp_path):
    (tmp_path / "b.bin").write_bytes(b"\x00" * 20)
    with pytest.raises(FormatError):
        core_io.load_scan_bin(tmp_path / "b.bin")


def test_scan_bin_roundtrip_preserves_order(tmp_path):
    pts = np.random.default_rng(0).normal(size=(50, 3)).astype(np.float32).astype(np.float64)
    core_io.write_scan_bin(tmp_path / "r.bin", pts)
    np.testing.assert_array_equal(core_io.load_scan_bin(tmp_path / "r.bin"), pts)


def test_poses_identity_and_translation(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 5 0 1 0 0 0 0 1 -1\n")
    a, b = core_io.load_poses_kitti(p, 2)
    np.testing.assert_array_equal(a.matrix(), np.eye(4))
    np.testing.assert_array_equal(b.translation, [5, 0, -1])
    np.testing.assert_allclose(b.apply(np.zeros((1, 3))), [[5, 0, -1]])


def test_poses_reflection_rejected(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n-1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(FormatError, match=":2:"):
        core_io.load_poses_kitti(p, 2)


def test_poses_too_few_lines(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(FormatError):
        core_io.load_poses_kitti(p, 3)


def test_poses_reorthonormalized_within_tolerance(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1.0002 0 0 0 0 1 0 0 0 0 0.9999 0\n")
    (pose,) = core_io.load_poses_kitti(p, 1)
    np.testing.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-12)


def test_poses_roundtrip(tmp_path):
    poses = [Pose.from_yaw(0.3 * i, [i, -2.0 * i, 0.5]) for i in range(4)]
    core_io.write_poses_kitti(tmp_path / "p.txt", poses)
    back = core_io.load_poses_kitti(tmp_path / "p.txt", 4)
    for a, b in zip(poses, back):
        np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-15)


def test_assemble_identity():
    seq = core_io.assemble_sequence([np.array([[1.0, 0, 0]])], [Pose.identity()])
    np.testing.assert_array_equal(seq[0].points_world, [[1, 0, 0]])
    np.testing.assert_array_equal(seq[0].origin, [0, 0, 0])


def test_assemble_translation():
    seq = core_io.assemble_sequence([np.array([[1.0, 0, 0]])], [Pose(np.eye(3), [0, 0, 2])])
    np.testing.assert_array_equal(seq[0].points_world, [[1, 0, 2]])
    np.testing.assert_array_equal(seq[0].origin, [0, 0, 2])


def test_assemble_yaw_second_scan():
    yaw90 = Pose(np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]]), [3, 0, 0])
    seq = core_io.assemble_sequence([np.array([[1.0, 0, 0]])] * 2, [Pose.identity(), yaw90])
    np.testing.assert_allclose(seq[1].points_world, [[3, 1, 0]])
    assert [s.frame for s in seq] == [0, 1]


def test_assemble_length_mismatch():
    with pytest.raises(FormatError):
        core_io.assemble_sequence([np.zeros((1, 3))], [])


@settings(max_examples=50, deadline=None)
@given(yaw=st.floats(-np.pi, np.pi), t=st.lists(st.floats(-100, 100), min_size=3, max_size=3),
       seed=st.integers(0, 2**16))
def test_assemble_then_inverse_recovers_sensor_points(yaw, t, seed):
    pts = np.random.default_rng(seed).uniform(-50, 50, size=(20, 3))
    pose = Pose.from_yaw(yaw, t)
    seq = core_io.assemble_sequence([pts], [pose])
    back = pose.apply_inverse(seq[0].points_world)
    assert np.all(np.abs(back - pts) <= 1e-9 * np.maximum(np.abs(pts), 1.0))


def test_sequence_requires_contiguous_frames():
    s = core_io.Scan(frame=1, origin=np.zeros(3), points_world=np.ones((1, 3)))
    with pytest.raises(FormatError):
        core_io.ScanSequence([s])


def test_write_labels_bytes(tmp_path):
    core_io.write_labels(tmp_path / "l.label", [core_io.STATIC, core_io.DYNAMIC])
    assert (tmp_path / "l.label").read_bytes() == bytes.fromhex("0000000001000000")


def test_write_labels_empty_and_roundtrip(tmp_path):
    core_io.write_labels(tmp_path / "e.label", [])
    assert (tmp_path / "e.label").read_bytes() == b""
    lab = np.random.default_rng(3).integers(0, 2, 100)
    core_io.write_labels(tmp_path / "r.label", lab)
    np.testing.assert_array_equal(core_io.read_labels(tmp_path / "r.label"), lab)


def test_loaders_deterministic(tmp_path):
    path = _bin(tmp_path / "d.bin", [(1.5, -2.0, 3.25, 0.0), (0.1, 0.2, 0.3, 9.0)])
    a, b = core_io.load_scan_bin(path), core_io.load_scan_bin(path)
    assert a.tobytes() == b.tobytes()


# configuration ----------------------------------------------------------------


def test_config_defaults_match_table():
    cfg = MapConfig()
    assert (cfg.levels, cfg.feature_dim, cfg.basis_count) == (2, 8, 32)
    assert (cfg.mlp_hidden_layers, cfg.mlp_hidden_width) == (2, 64)
    assert (cfg.surface_samples, cfg.free_samples) == (5, 15)
    assert (cfg.lambda_e, cfg.lambda_f, cfg.lambda_c) == (0.02, 0.25, 0.2)
    assert (cfg.truncation, cfg.r_dense, cfg.finest_voxel_size, cfg.d_static) == (0.5, 15.0, 0.3, 0.16)
    assert cfg.eps_start == pytest.approx(0.6)
    assert cfg.eps_end == pytest.approx(0.075)


def test_config_precedence_three_layers(tmp_path):
    f = tmp_path / "map.cfg"
    f.write_text("# file layer\ntruncation = 0.4\nbatch_size = 128\nseed = 3\n")
    cfg = core_io.load_config(f, ["batch_size=64"])
    assert cfg.truncation == 0.4          # file beats default
    assert cfg.batch_size == 64           # override beats file
    assert cfg.seed == 3
    assert cfg.feature_dim == 8           # default survives
    assert core_io.load_config(f, ["batch_size=64"], seed=9).seed == 9


def test_config_unknown_key_rejected(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("truncaton = 0.4\n")
    with pytest.raises(FormatError, match="unknown key"):
        core_io.load_config(f)
    with pytest.raises(FormatError):
        core_io.load_config(None, ["nope=1"])


def test_config_text_roundtrip():
    cfg = MapConfig(basis_count=5, truncation=0.25, deterministic=True)
    assert core_io.config_from_text(cfg.to_text()) == cfg


def test_config_invariants():
    with pytest.raises(FormatError):
        MapConfig(basis_count=1)
    with pytest.raises(FormatError):
        MapConfig(truncation=0.0)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.bin"
    with pytest.raises(RuntimeError):
        with core_io.atomic_write(target) as fh:
            fh.write(b"partial")
            raise RuntimeError("interrupted")
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []
