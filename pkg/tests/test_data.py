import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_net
from posegraphnet.checkpoint import (CheckpointError, decode, load_checkpoint, round_to_storage,
                                     save_checkpoint)
from posegraphnet.data import (DataError, ParseError, PoseSample, SchemaError, denormalize_2d, load_dataset,
                               normalize_2d, root_center_3d, save_dataset, stack_targets)
from posegraphnet.model import param_count
from posegraphnet.skeleton import chain
from posegraphnet.synthetic import CameraModel, bone_lengths, generate_synthetic, load_joint_limits


# coordinates

def test_normalize_2d_examples():
    np.testing.assert_array_equal(normalize_2d([[500.0, 501.0]], 1000, 1002), [[0.0, 0.0]])
    np.testing.assert_array_equal(normalize_2d([[0.0, 0.0], [1000.0, 0.0]], 1000, 1002)[:, 0], [-1.0, 1.0])
    np.testing.assert_allclose(normalize_2d([[1000.0, 1002.0]], 1000, 1002), [[1.0, 1.002]], rtol=1e-15)


def test_normalize_2d_bad_width():
    with pytest.raises(DataError):
        normalize_2d([[1.0, 1.0]], 0, 10)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (17, 2), elements=st.floats(0, 2000)), st.floats(100, 4000), st.floats(100, 4000))
def test_normalize_2d_inverse(p, w, h):
    np.testing.assert_allclose(denormalize_2d(normalize_2d(p, w, h), w, h), p, atol=1e-9)


def test_root_center_examples(rng):
    p = rng.normal(size=(17, 3))
    p[0] = 0.0
    np.testing.assert_array_equal(root_center_3d(p, 0), p)
    assert np.array_equal(root_center_3d(np.full((17, 3), 7.5), 0), np.zeros((17, 3)))
    q = rng.normal(0, 500, size=(17, 3))
    c = root_center_3d(q, 0)
    assert np.array_equal(c[0], np.zeros(3))
    np.testing.assert_allclose(c[5] - c[3], q[5] - q[3], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (17, 3), elements=st.floats(-1e4, 1e4)), st.integers(0, 16))
def test_root_center_idempotent(p, root):
    once = root_center_3d(p, root)
    assert np.array_equal(root_center_3d(once, root), once)


# dataset files

def _write(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return path


def _record(n=17, with_3d=True, **kw):
    rec = {"pose2d": [[10.0 + i, 20.0] for i in range(n)], "image_width": 100, "image_height": 80}
    if with_3d:
        rec["pose3d"] = [[float(i), 2.0, 3.5] for i in range(n)]
    rec.update(kw)
    return json.dumps(rec)


def test_empty_file(tmp_path, skeleton):
    assert load_dataset(_write(tmp_path / "d.jsonl", []), skeleton) == []


def test_single_record_round_trip(tmp_path, skeleton):
    path = _write(tmp_path / "d.jsonl", [_record(subject="S9", action="Walk", camera="54138969")])
    (s,) = load_dataset(path, skeleton)
    assert s.pose2d[3].tolist() == [13.0, 20.0]
    assert s.pose3d[4].tolist() == [4.0, 2.0, 3.5]
    assert (s.image_width, s.image_height, s.subject, s.action, s.camera) == (100, 80, "S9", "Walk", "54138969")
    save_dataset([s], tmp_path / "e.jsonl")
    assert json.loads((tmp_path / "e.jsonl").read_text()) == json.loads(path.read_text())


def test_missing_pose3d_depends_on_mode(tmp_path, skeleton):
    path = _write(tmp_path / "d.jsonl", [_record(with_3d=False)])
    (s,) = load_dataset(path, skeleton, require_3d=False)
    assert s.pose3d is None
    with pytest.raises(ParseError, match="line 1: missing field 'pose3d'"):
        load_dataset(path, skeleton)
    with pytest.raises(DataError):
        stack_targets([s], 0)


def test_parse_error_reports_line(tmp_path, skeleton):
    path = _write(tmp_path / "d.jsonl", [_record(), "", "{not json"])
    with pytest.raises(ParseError, match="line 3"):
        load_dataset(path, skeleton)


@pytest.mark.parametrize("line, exc, fragment", [
    (_record(n=16), SchemaError, "16 joints, skeleton has 17"),
    (json.dumps({"pose2d": [[1, 2]] * 17}), ParseError, "missing field 'image_width'"),
    (_record(pose2d=[["a", 1]] * 17), ParseError, "not numeric"),
    (_record(image_width=-5), ParseError, "positive"),
    ("[1, 2]", ParseError, "JSON object"),
])
def test_invalid_records(tmp_path, skeleton, line, exc, fragment):
    with pytest.raises(exc, match=fragment):
        load_dataset(_write(tmp_path / "d.jsonl", [line]), skeleton)


def test_out_of_image_points_are_clamped(tmp_path, skeleton, caplog):
    rec = json.loads(_record())
    rec["pose2d"][0] = [-5.0, 200.0]
    with caplog.at_level(logging.WARNING):
        (s,) = load_dataset(_write(tmp_path / "d.jsonl", [json.dumps(rec)]), skeleton)
    assert s.pose2d[0].tolist() == [0.0, 80.0]
    assert "clamping" in caplog.text


# synthetic generator

def test_synthetic_reprojection(synth32):
    cam = CameraModel()
    for s in synth32:
        assert np.max(np.abs(cam.project(s.pose3d) - s.pose2d)) < 1e-6
        assert np.all(s.pose3d[:, 2] > 0)
        assert 3000 <= s.pose3d[0, 2] <= 6000


def test_synthetic_bone_lengths_constant(synth32, skeleton):
    lengths = np.stack([bone_lengths(skeleton, s.pose3d) for s in synth32])
    assert np.max(np.abs(lengths - lengths[0])) < 1e-9


def test_synthetic_inside_image(synth32):
    for s in synth32:
        assert np.all(s.pose2d >= 10) and np.all(s.pose2d[:, 0] <= 990) and np.all(s.pose2d[:, 1] <= 992)


def test_synthetic_deterministic():
    a, b = generate_synthetic(5, seed=3), generate_synthetic(5, seed=3)
    assert all(np.array_equal(x.pose3d, y.pose3d) for x, y in zip(a, b))
    c = generate_synthetic(5, seed=4)
    assert not np.array_equal(a[0].pose3d, c[0].pose3d)


def test_synthetic_poses_vary(synth32):
    rel = np.stack([root_center_3d(s.pose3d, 0) for s in synth32])
    assert rel.std(axis=0).mean() > 20.0


def test_joint_limits_table():
    limits = load_joint_limits()
    # knees flex one way only
    for knee in ("RKnee", "LKnee"):
        lo, hi = limits[knee]["x"]
        assert lo >= 0 or hi <= 0


def test_camera_rejects_bad_focal():
    with pytest.raises(ValueError):
        CameraModel(focal=0)


def test_synthetic_rejects_empty():
    with pytest.raises(ValueError):
        generate_synthetic(0)


# checkpoints

def test_checkpoint_save_load_save_identical(tmp_path, skeleton):
    net = make_net(skeleton, hidden=8, seed=1)
    save_checkpoint(net, tmp_path / "a.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt", skeleton), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_preserves_outputs(tmp_path, skeleton, rng):
    net = make_net(skeleton, hidden=8, seed=1, per_layer_adjacency=True)
    for p in net.parameters():
        p.data += rng.normal(0, 0.05, size=p.shape)
    net.set_buffer("input.bn.running_var", rng.uniform(0.5, 2.0, size=8))
    round_to_storage(net)
    save_checkpoint(net, tmp_path / "a.ckpt")
    loaded = load_checkpoint(tmp_path / "a.ckpt", skeleton, hidden=8)
    x = rng.normal(size=(5, 17, 2))
    assert np.array_equal(loaded.predict(x), net.predict(x))
    assert param_count(loaded) == param_count(net)
    assert loaded.config == net.config


def test_checkpoint_layout(tmp_path, skeleton):
    save_checkpoint(make_net(skeleton), tmp_path / "a.ckpt")
    buf = (tmp_path / "a.ckpt").read_bytes()
    assert buf[:4] == b"PGN1"
    assert int.from_bytes(buf[4:8], "little") == 1
    tensors = decode(buf)
    assert int.from_bytes(buf[8:12], "little") == len(tensors)
    assert tensors["config.hidden"][0] == 8 and tensors["config.n_joints"][0] == 17


def test_checkpoint_truncated(tmp_path, skeleton):
    save_checkpoint(make_net(skeleton), tmp_path / "a.ckpt")
    path = tmp_path / "a.ckpt"
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(CheckpointError, match="truncated checkpoint: data of tensor 'blocks.2.unit1.bn.running_var'"):
        load_checkpoint(path, skeleton)


def test_checkpoint_bad_magic(tmp_path, skeleton):
    (tmp_path / "x.ckpt").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(tmp_path / "x.ckpt", skeleton)


def test_checkpoint_bad_version(tmp_path, skeleton):
    save_checkpoint(make_net(skeleton), tmp_path / "a.ckpt")
    buf = bytearray((tmp_path / "a.ckpt").read_bytes())
    buf[4] = 9
    (tmp_path / "a.ckpt").write_bytes(bytes(buf))
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(tmp_path / "a.ckpt", skeleton)


def test_checkpoint_wrong_skeleton(tmp_path, skeleton):
    save_checkpoint(make_net(skeleton), tmp_path / "a.ckpt")
    with pytest.raises(CheckpointError, match="'adjacency.self'"):
        load_checkpoint(tmp_path / "a.ckpt", chain(5))


def test_checkpoint_wrong_width(tmp_path, skeleton):
    save_checkpoint(make_net(skeleton), tmp_path / "a.ckpt")
    with pytest.raises(CheckpointError, match="hidden width 8"):
        load_checkpoint(tmp_path / "a.ckpt", skeleton, hidden=16)


def test_checkpoint_trailing_bytes(tmp_path, skeleton):
    save_checkpoint(make_net(skeleton), tmp_path / "a.ckpt")
    path = tmp_path / "a.ckpt"
    path.write_bytes(path.read_bytes() + b"\0\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path, skeleton)


def test_sample_record_omits_missing_fields():
    s = PoseSample(np.zeros((2, 2)), None, 10.0, 10.0)
    assert set(s.to_record()) == {"pose2d", "image_width", "image_height"}
