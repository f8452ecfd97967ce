"""Dataset ingestion: a deterministic synthetic blob generator and the IDX
binary container used by the classic digit sets."""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["IdxFormatError", "gen_synthetic", "load_idx"]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX container."""


def gen_synthetic(n_samples: int, n_features: int, n_classes: int,
                  blob_spread: float, seed: int):
    """Gaussian blobs, one per class.

    Centroids sit on the unit circle in the first two feature dimensions at
    angles 2*pi*c/n_classes (the sine component is dropped when only one
    feature exists), so two classes in two features land at (+1, 0) and
    (-1, 0). Class labels cycle 0..n_classes-1 over the samples. Fully
    deterministic in the seed.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_features < 1:
        raise ValueError("need at least 1 feature")
    if n_samples < 1:
        raise ValueError("need at least 1 sample")
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centroids = np.zeros((n_classes, n_features))
    centroids[:, 0] = np.cos(angles)
    if n_features > 1:
        centroids[:, 1] = np.sin(angles)
    labels = np.arange(n_samples, dtype=np.int64) % n_classes
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    x = centroids[labels] + blob_spread * rng.normal(size=(n_samples, n_features))
    return x, labels


def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise IdxFormatError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path: str, labels_path: str):
    """Load an IDX image/label pair.

    Pixels come back as float64 rows in [0, 1], labels as int64. Bad magic
    numbers, truncated payloads, and image/label count mismatches each raise
    a distinct IdxFormatError.
    """
    with open(images_path, "rb") as fh:
        raw = fh.read()
    magic = _read_be32(raw, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x}, "
                             f"expected 0x{IDX_IMAGE_MAGIC:08x}")
    count = _read_be32(raw, 4, images_path)
    rows = _read_be32(raw, 8, images_path)
    cols = _read_be32(raw, 12, images_path)
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise IdxFormatError(f"{images_path}: truncated, expected {need} bytes, "
                             f"have {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    x = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as fh:
        raw = fh.read()
    magic = _read_be32(raw, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic 0x{magic:08x}, "
                             f"expected 0x{IDX_LABEL_MAGIC:08x}")
    n_labels = _read_be32(raw, 4, labels_path)
    if len(raw) < 8 + n_labels:
        raise IdxFormatError(f"{labels_path}: truncated")
    if n_labels != count:
        raise IdxFormatError(f"count mismatch: {count} images vs {n_labels} labels")
    y = np.frombuffer(raw, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    return x, y
