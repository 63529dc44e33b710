"""Datasets: synthetic Gaussian blobs, MNIST IDX files and IID sharding."""

from __future__ import annotations

import gzip
import hashlib
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    sample_count: int
    input_dim: int
    class_count: int
    source: str  # "synthetic" | "idx_files"


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    meta: DatasetMeta

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx, name: str | None = None) -> "Dataset":
        X, y = self.X[idx], self.y[idx]
        meta = DatasetMeta(name or self.meta.name, len(y), self.meta.input_dim,
                           self.meta.class_count, self.meta.source)
        return Dataset(X, y, meta)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()


def gen_synthetic(classes: int, dim: int, per_class: int, separation: float, seed, name: str = "synthetic") -> Dataset:
    """Unit-covariance Gaussian blobs whose means are ``separation`` apart.

    Means sit on scaled basis vectors when ``dim >= classes`` (all pairs
    exactly ``separation`` apart), otherwise evenly along the first axis.
    """
    if dim < 1:
        raise ConfigError("must be >= 1", "dim")
    if classes < 2:
        raise ConfigError("must be >= 2", "classes")
    if per_class < 1:
        raise ConfigError("must be >= 1", "per_class")
    if not separation > 0:
        raise ConfigError("must be positive", "separation")
    rng = np.random.default_rng(seed)
    means = np.zeros((classes, dim))
    if dim >= classes:
        means[np.arange(classes), np.arange(classes)] = separation / math.sqrt(2.0)
    else:
        means[:, 0] = separation * np.arange(classes)
    y = np.repeat(np.arange(classes), per_class)
    X = means[y] + rng.standard_normal((len(y), dim))
    perm = rng.permutation(len(y))
    X, y = X[perm], y[perm].astype(np.int64)
    return Dataset(X, y, DatasetMeta(name, len(y), dim, classes, "synthetic"))


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_header(buf: bytes, magic: int, ndim: int, path):
    need = 4 + 4 * ndim
    if len(buf) < 4:
        raise ParseError(f"file too short for magic ({len(buf)} bytes)", 0, path)
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise ParseError(f"bad magic 0x{got:08x}, expected 0x{magic:08x}", 0, path)
    if len(buf) < need:
        raise ParseError("truncated header", len(buf), path)
    return struct.unpack_from(f">{ndim}I", buf, 4), need


def read_idx(images_path, labels_path, limit: int | None = None, name: str = "mnist") -> Dataset:
    """First ``limit`` image/label pairs, pixels scaled to [0, 1] and flattened."""
    if limit is not None and limit < 1:
        raise ConfigError(f"limit must be >= 1, got {limit} (empty dataset)", "limit")
    with _open(images_path) as f:
        ibuf = f.read()
    with _open(labels_path) as f:
        lbuf = f.read()

    (n_img, rows, cols), ioff = _read_header(ibuf, IDX_IMAGES_MAGIC, 3, images_path)
    (n_lab,), loff = _read_header(lbuf, IDX_LABELS_MAGIC, 1, labels_path)
    if n_img != n_lab:
        raise ParseError(f"image count {n_img} != label count {n_lab}", 4, labels_path)
    pix = rows * cols
    if len(ibuf) - ioff < n_img * pix:
        raise ParseError(
            f"truncated payload: need {n_img * pix} pixel bytes, have {len(ibuf) - ioff}",
            len(ibuf), images_path,
        )
    if len(lbuf) - loff < n_lab:
        raise ParseError(
            f"truncated payload: need {n_lab} label bytes, have {len(lbuf) - loff}",
            len(lbuf), labels_path,
        )
    n = n_img if limit is None else min(limit, n_img)
    if n == 0:
        raise ConfigError("IDX files contain no samples", "limit")
    X = np.frombuffer(ibuf, dtype=np.uint8, count=n * pix, offset=ioff).reshape(n, pix)
    X = X.astype(np.float64) / 255.0
    y = np.frombuffer(lbuf, dtype=np.uint8, count=n, offset=loff).astype(np.int64)
    classes = max(10, int(y.max()) + 1)
    return Dataset(X, y, DatasetMeta(name, n, pix, classes, "idx_files"))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or len(images) != len(labels):
        raise ValueError("images must be (n, rows, cols) with one label per image")
    n, r, c = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, r, c))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(labels.tobytes())


def shard_iid(dataset: Dataset, N: int, seed) -> list[Dataset]:
    """Seeded shuffle then contiguous splits; the last shard takes the remainder."""
    if N < 1:
        raise ConfigError("must be >= 1", "N")
    n = len(dataset)
    if N > n:
        raise ConfigError(f"{N} shards requested for {n} samples", "N")
    perm = np.random.default_rng(seed).permutation(n)
    size = n // N
    shards = []
    for k in range(N):
        stop = n if k == N - 1 else (k + 1) * size
        shards.append(dataset.subset(perm[k * size : stop], f"{dataset.meta.name}[{k}]"))
    return shards


def concat(shards) -> Dataset:
    first = shards[0]
    X = np.concatenate([s.X for s in shards])
    y = np.concatenate([s.y for s in shards])
    m = first.meta
    return Dataset(X, y, DatasetMeta(m.name, len(y), m.input_dim, m.class_count, m.source))


def check_paths(*paths) -> None:
    for p in paths:
        if not os.path.exists(p):
            raise FileNotFoundError(p)
