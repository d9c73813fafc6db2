import struct

import numpy as np
import pytest

from masklab.data import Dataset, load_idx, save_idx, split, synthetic_blobs
from masklab.errors import ConfigError, DataFormatError


def write_idx_pair(tmp_path, images, labels):
    """Hand-built IDX files: images (n, rows, cols) uint8, labels (n,) uint8."""
    img_path = tmp_path / "images.idx"
    lbl_path = tmp_path / "labels.idx"
    n, rows, cols = images.shape
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())
    with open(lbl_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels.astype(np.uint8).tobytes())
    return img_path, lbl_path


def test_load_idx_hand_crafted(tmp_path):
    images = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3)
    labels = np.array([1, 0], dtype=np.uint8)
    img, lbl = write_idx_pair(tmp_path, images, labels)
    ds = load_idx(img, lbl)
    assert ds.inputs.shape == (2, 6)
    assert ds.inputs.dtype == np.float64
    np.testing.assert_allclose(ds.inputs[0], np.arange(6) / 255.0)
    np.testing.assert_array_equal(ds.labels, [1, 0])
    assert ds.n_classes == 2
    assert ds.provenance["image_dims"] == [2, 3]


def test_load_idx_limit(tmp_path):
    images = np.zeros((5, 2, 2), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
    img, lbl = write_idx_pair(tmp_path, images, labels)
    ds = load_idx(img, lbl, limit=3)
    assert len(ds) == 3
    ds0 = load_idx(img, lbl, limit=0)
    assert len(ds0) == 0
    with pytest.raises(ConfigError):
        load_idx(img, lbl, limit=-1)


def test_load_idx_bad_magic(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(struct.pack(">II", 0xDEADBEEF, 1))
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(path, path)


def test_load_idx_truncated(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    labels = np.zeros(3, dtype=np.uint8)
    img, lbl = write_idx_pair(tmp_path, images, labels)
    raw = img.read_bytes()
    img.write_bytes(raw[:-1])
    with pytest.raises(DataFormatError, match="payload"):
        load_idx(img, lbl)
    img.write_bytes(raw[:6])
    with pytest.raises(DataFormatError, match="truncated"):
        load_idx(img, lbl)


def test_load_idx_count_mismatch(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    labels = np.zeros(3, dtype=np.uint8)
    img, _ = write_idx_pair(tmp_path, images, labels)
    other = tmp_path / "other"
    other.mkdir()
    _, lbl = write_idx_pair(other, np.zeros((2, 2, 2), dtype=np.uint8),
                            np.zeros(2, dtype=np.uint8))
    with pytest.raises(DataFormatError, match="match"):
        load_idx(img, lbl)


def test_idx_roundtrip_quantization_error(tmp_path):
    ds = synthetic_blobs(seed=1, n_per_class=10, d=6, n_classes=2,
                         separation=0.5, noise=0.05)
    img = tmp_path / "rt.images"
    lbl = tmp_path / "rt.labels"
    save_idx(ds, img, lbl)
    back = load_idx(img, lbl)
    np.testing.assert_array_equal(back.labels, ds.labels)
    # 8-bit round half-up: error at most half a quantization step
    assert np.max(np.abs(back.inputs - ds.inputs)) <= 0.5 / 255.0 + 1e-12
    # second round-trip is exact (already on the 8-bit grid)
    save_idx(back, img, lbl)
    again = load_idx(img, lbl)
    np.testing.assert_array_equal(again.inputs, back.inputs)


def test_dataset_validation():
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=np.int64), 2)
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), 2)


def test_blobs_deterministic_and_in_range():
    a = synthetic_blobs(seed=9, n_per_class=20, d=8, n_classes=3,
                        separation=0.8, noise=0.05)
    b = synthetic_blobs(seed=9, n_per_class=20, d=8, n_classes=3,
                        separation=0.8, noise=0.05)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.labels, b.labels)
    assert a.inputs.min() >= 0.0 and a.inputs.max() <= 1.0
    assert len(a) == 60
    c = synthetic_blobs(seed=10, n_per_class=20, d=8, n_classes=3,
                        separation=0.8, noise=0.05)
    assert not np.array_equal(a.inputs, c.inputs)


def test_blobs_separation_enforced():
    ds = synthetic_blobs(seed=3, n_per_class=5, d=16, n_classes=4,
                         separation=1.0, noise=0.0)
    centers = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(4)])
    dmin = min(np.linalg.norm(centers[i] - centers[j])
               for i in range(4) for j in range(i + 1, 4))
    assert dmin >= 1.0 - 1e-6


def test_blobs_infeasible_separation_reports_max():
    with pytest.raises(ConfigError, match="maximal feasible"):
        synthetic_blobs(seed=0, n_per_class=5, d=4, n_classes=3,
                        separation=50.0, noise=0.05)


def test_blobs_parameter_validation():
    with pytest.raises(ConfigError):
        synthetic_blobs(seed=0, n_per_class=5, d=1, n_classes=2,
                        separation=1.0)
    with pytest.raises(ConfigError):
        synthetic_blobs(seed=0, n_per_class=5, d=4, n_classes=2,
                        separation=0.0)


def test_split_disjoint_exhaustive_deterministic():
    ds = synthetic_blobs(seed=2, n_per_class=25, d=4, n_classes=2,
                         separation=0.5, noise=0.05)
    tr, te = split(ds, 0.8, seed=0)
    assert len(tr) == 40 and len(te) == 10
    joined = np.concatenate([tr.inputs, te.inputs])
    assert {tuple(r) for r in joined} == {tuple(r) for r in ds.inputs}
    tr2, te2 = split(ds, 0.8, seed=0)
    assert np.array_equal(tr.inputs, tr2.inputs)
    tr3, _ = split(ds, 0.8, seed=1)
    assert not np.array_equal(tr.inputs, tr3.inputs)
    with pytest.raises(ConfigError):
        split(ds, 1.0, seed=0)
