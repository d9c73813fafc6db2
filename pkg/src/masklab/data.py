"""Dataset ingestion: IDX (MNIST-compatible) files and seeded synthetic blobs."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray   # (n, d) float64 in [0, 1]
    labels: np.ndarray   # (n,) int64 in [0, n_classes)
    n_classes: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise DataFormatError(
                f"{len(self.inputs)} inputs but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError("label out of range")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.n_classes,
                       dict(self.provenance))


def _read_idx(path, expected_magic: int):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}, "
                              f"expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DataFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims))
    body = raw[header_len:]
    if len(body) != count:
        raise DataFormatError(f"{path}: payload is {len(body)} bytes, expected {count}")
    return np.frombuffer(body, dtype=np.uint8), dims


def load_idx(images_path, labels_path, limit: Optional[int] = None) -> Dataset:
    """Pixels scaled by 1/255 into [0, 1]; row-major flattening per image."""
    pixels, img_dims = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels, lbl_dims = _read_idx(labels_path, IDX_LABELS_MAGIC)
    n_images = img_dims[0]
    if n_images != lbl_dims[0]:
        raise DataFormatError(
            f"image count {n_images} does not match label count {lbl_dims[0]}"
        )
    d = int(np.prod(img_dims[1:])) if len(img_dims) > 1 else 0
    inputs = (pixels.reshape(n_images, d).astype(np.float64)) / 255.0
    labels = labels.astype(np.int64)
    if limit is not None:
        if limit < 0:
            raise ConfigError("limit must be nonnegative")
        inputs, labels = inputs[:limit], labels[:limit]
    n_classes = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(inputs, labels, n_classes, {
        "kind": "idx",
        "images": str(images_path),
        "labels": str(labels_path),
        "image_dims": list(img_dims[1:]),
        "limit": limit,
    })


def save_idx(dataset: Dataset, images_path, labels_path):
    """8-bit quantized round-trip companion to load_idx."""
    n = len(dataset)
    dims = dataset.provenance.get("image_dims") or [dataset.inputs.shape[1], 1]
    pixels = np.clip(np.floor(dataset.inputs * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", (0x08 << 8) | (1 + len(dims))))
        fh.write(struct.pack(f">{1 + len(dims)}I", n, *dims))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_LABELS_MAGIC))
        fh.write(struct.pack(">I", n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def synthetic_blobs(seed: int, n_per_class: int, d: int, n_classes: int,
                    separation: float, noise: float = 0.05) -> Dataset:
    """Gaussian blobs around seeded centers in [0.25, 0.75]^d, rescaled so the
    minimum inter-center distance is >= separation, samples clipped to [0, 1].
    """
    if d < 2:
        raise ConfigError("synthetic_blobs: d must be >= 2")
    if separation <= 0:
        raise ConfigError("synthetic_blobs: separation must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    centers = rng.uniform(0.25, 0.75, size=(n_classes, d))
    dists = [
        float(np.linalg.norm(centers[i] - centers[j]))
        for i in range(n_classes) for j in range(i + 1, n_classes)
    ]
    min_dist = min(dists) if dists else np.inf
    if min_dist < separation:
        # grow the spread about the box center; reject if centers would leave [0, 1]^d
        spread = np.max(np.abs(centers - 0.5))
        max_scale = 0.5 / spread if spread > 0 else np.inf
        scale = separation / min_dist
        if scale > max_scale:
            feasible = min_dist * max_scale
            raise ConfigError(
                f"synthetic_blobs: separation {separation} infeasible for these "
                f"centers; maximal feasible value is {feasible:.6g}"
            )
        centers = 0.5 + (centers - 0.5) * scale
    xs, ys = [], []
    for c in range(n_classes):
        pts = centers[c] + rng.normal(0.0, noise, size=(n_per_class, d))
        xs.append(np.clip(pts, 0.0, 1.0))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys), n_classes, {
        "kind": "synthetic", "seed": seed, "n_per_class": n_per_class,
        "d": d, "n_classes": n_classes, "separation": separation, "noise": noise,
    })


def split(dataset: Dataset, train_fraction: float, seed: int):
    """Seeded permutation then prefix split; disjoint and exhaustive."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must be strictly between 0 and 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(len(dataset))
    cut = int(round(len(dataset) * train_fraction))
    return dataset.subset(order[:cut]), dataset.subset(order[cut:])
