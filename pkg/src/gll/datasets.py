"""Dataset generation and loading: the two-moons toy set and IDX containers."""

from __future__ import annotations

import struct

import numpy as np

from .errors import IdxParseError

__all__ = ["gen_two_moons", "load_idx", "save_idx"]

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def gen_two_moons(n, noise=0.1, seed=0, shuffle=True):
    """Two interleaving half-circles with isotropic Gaussian noise.

    Class 0 sits on the upper unit semicircle (cos t, sin t); class 1 on the
    opposing semicircle (1 - cos t, 0.5 - sin t), t in [0, pi]. n must be
    even (balanced classes). Deterministic per seed; rows are shuffled so
    ordinal prefixes mix both classes.
    """
    if n % 2 != 0:
        raise ValueError("two-moons size n must be even")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    X = np.vstack([outer, inner])
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    X = X + rng.normal(0.0, noise, size=X.shape)
    if shuffle:
        perm = rng.permutation(n)
        X, y = X[perm], y[perm]
    return X, y


def _read_exact(f, count, offset, what):
    data = f.read(count)
    if len(data) != count:
        raise IdxParseError(
            f"truncated IDX payload reading {what}: wanted {count} bytes at "
            f"offset {offset}, got {len(data)}"
        )
    return data


def load_idx(images_path, labels_path):
    """Parse an IDX image/label file pair.

    Returns (images, labels) with images (count, rows, cols) float64 scaled
    to [0, 1] and labels (count,) int64. Malformed files raise IdxParseError
    carrying the byte offset.
    """
    with open(images_path, "rb") as f:
        header = _read_exact(f, 16, 0, "image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != _IDX_IMAGES_MAGIC:
            raise IdxParseError(
                f"bad image magic 0x{magic:08x} at offset 0 in {images_path}"
            )
        payload = _read_exact(f, count * rows * cols, 16, "pixels")
        images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    with open(labels_path, "rb") as f:
        header = _read_exact(f, 8, 0, "label header")
        magic, lcount = struct.unpack(">II", header)
        if magic != _IDX_LABELS_MAGIC:
            raise IdxParseError(
                f"bad label magic 0x{magic:08x} at offset 0 in {labels_path}"
            )
        labels = np.frombuffer(_read_exact(f, lcount, 8, "labels"), dtype=np.uint8)
    if count != lcount:
        raise IdxParseError(
            f"count mismatch: {count} images vs {lcount} labels"
        )
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def save_idx(images, labels, images_path, labels_path):
    """Write an IDX pair; images are uint8 (count, rows, cols)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    if len(labels) != count:
        raise ValueError("image and label counts differ")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, count, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", _IDX_LABELS_MAGIC, count))
        f.write(labels.tobytes())
