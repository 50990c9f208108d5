import numpy as np
import pytest

from semdepth import io
from semdepth.synthetic import make_dataset


def test_tensor_round_trip(tmp_path, rng):
    tensors = {"a": rng.normal(size=(2, 3)).astype(np.float32), "scalar": np.float32(3.5) * np.ones(()),
               "empty": np.zeros((0, 4), np.float32)}
    io.save_tensors(tmp_path / "x.fsre", tensors)
    back = io.load_tensors(tmp_path / "x.fsre")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].astype(np.float32).tobytes() == np.asarray(tensors[k], np.float32).tobytes()


def test_empty_file_is_valid(tmp_path):
    io.save_tensors(tmp_path / "e.fsre", {})
    assert io.load_tensors(tmp_path / "e.fsre") == {}


@pytest.mark.parametrize("corrupt, message", [
    (lambda b: b[:-3], "truncated"),
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + (7).to_bytes(4, "little") + b[8:], "version"),
    (lambda b: b + b"\0", "trailing"),
    (lambda b: b[:6], "short"),
])
def test_corrupt_files(tmp_path, corrupt, message):
    path = tmp_path / "c.fsre"
    io.save_tensors(path, {"w": np.ones((3, 3), np.float32)})
    path.write_bytes(corrupt(path.read_bytes()))
    with pytest.raises(io.CheckpointError, match=message):
        io.load_tensors(path)


def test_ppm_pfm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (3, 5, 7)) / 255.0
    io.write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_allclose(io.read_ppm(tmp_path / "a.ppm"), img, atol=1e-6)
    depth = rng.uniform(0.1, 100, (5, 7)).astype(np.float32)
    io.write_pfm(tmp_path / "d.pfm", depth)
    assert np.array_equal(io.read_pfm(tmp_path / "d.pfm"), depth)


def test_ppm_header_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
    img = io.read_ppm(tmp_path / "c.ppm")
    assert img.shape == (3, 1, 2) and img[0, 0, 0] == 1.0 and img[1, 0, 1] == 1.0
    (tmp_path / "p3.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError):
        io.read_ppm(tmp_path / "p3.ppm")


def test_config_parsing():
    from semdepth.train import TrainConfig
    cfg = io.apply_config(TrainConfig, io.parse_config("epochs = 3  # short\nmilestones = 1, 2\n\nalpha=0.5\n"))
    assert (cfg.epochs, cfg.milestones, cfg.alpha) == (3, (1, 2), 0.5)
    with pytest.raises(io.ConfigError, match="unknown"):
        io.apply_config(TrainConfig, {"epochz": "3"})
    with pytest.raises(io.ConfigError, match="duplicate"):
        io.parse_config("a=1\na=2")
    with pytest.raises(io.ConfigError):
        io.parse_config("just words")


def test_dataset_round_trip(tmp_path):
    samples = make_dataset(2, seed=5)
    io.write_dataset(tmp_path / "d", samples)
    back = io.read_dataset(tmp_path / "d")
    assert len(back) == 2
    for a, b in zip(samples, back):
        np.testing.assert_allclose(b.target, a.target, atol=1 / 255)
        np.testing.assert_allclose(b.gt_depth, a.gt_depth.astype(np.float32))
        assert np.array_equal(b.gt_semantics, a.gt_semantics)
        np.testing.assert_allclose(b.pose_prev.vector, a.pose_prev.vector)
        assert b.intrinsics == a.intrinsics


def test_empty_dataset(tmp_path):
    (tmp_path / io.MANIFEST).write_text("\n")
    with pytest.raises(ValueError, match="empty"):
        io.read_dataset(tmp_path)
