"""Datasets, IDX files and device partitions."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(Exception):
    """Dataset could not be loaded or is inconsistent."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 10

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64).reshape(-1)
        if x.ndim != 2 or len(x) != len(y):
            raise DataError(f"features {x.shape} and labels {y.shape} disagree")
        if len(y) < 1:
            raise DataError("dataset is empty")
        if x.min() < 0.0 or x.max() > 1.0:
            raise DataError("feature values must lie in [0, 1]")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class Partition:
    shards: tuple[np.ndarray, ...]

    def __len__(self):
        return len(self.shards)

    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedFileError(f"{path}: corrupt gzip stream") from exc
    return raw


def _parse_idx(raw: bytes, path, magic: int, ndim: int) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFileError(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair (plain or gzip). Pixels are scaled by 1/255."""
    images = _parse_idx(_read_bytes(images_path), images_path, IDX_IMAGES_MAGIC, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(features, labels, n_classes)


def write_idx(dataset: Dataset, images_path, labels_path, shape: tuple[int, int] | None = None):
    """Write a dataset as an IDX pair; features are quantised to bytes."""
    rows, cols = shape if shape is not None else (1, dataset.dim)
    if rows * cols != dataset.dim:
        raise ValueError(f"image shape {rows}x{cols} does not hold {dataset.dim} features")
    pixels = np.rint(dataset.features * 255.0).astype(np.uint8)
    n = len(dataset)
    opener = gzip.open if str(images_path).endswith(".gz") else open
    with opener(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    opener = gzip.open if str(labels_path).endswith(".gz") else open
    with opener(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def synthetic_blobs(
    n: int, classes: int, dim: int, separation: float, seed: int, sigma: float = 0.05
) -> Dataset:
    """Balanced Gaussian clusters in the unit cube, clipped to [0, 1].

    Centres lie along random orthonormal directions from the cube centre, at
    pairwise distance ``separation * sigma`` (approximately, when there are
    more classes than dimensions).
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if classes < 1 or n < classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    if classes <= dim:
        q, _ = np.linalg.qr(rng.normal(size=(dim, classes)))
        directions = q.T
    else:
        directions = rng.normal(size=(classes, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    # orthonormal directions put centres sqrt(2) * radius apart
    radius = separation * sigma / np.sqrt(2.0)
    centres = 0.5 + radius * directions
    labels = np.arange(n) % classes
    labels = labels[rng.permutation(n)]
    features = centres[labels] + sigma * rng.normal(size=(n, dim))
    return Dataset(np.clip(features, 0.0, 1.0), labels, classes)


def partition_equal(dataset: Dataset, n_devices: int, seed: int) -> Partition:
    if n_devices < 1:
        raise ValueError("n_devices must be at least 1")
    if n_devices > len(dataset):
        raise ValueError(f"cannot split {len(dataset)} samples over {n_devices} devices")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return Partition(tuple(np.array_split(order, n_devices)))


def holdout_split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random (train, validation) split with ``round(fraction * n)`` validation samples."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n_val = int(np.floor(fraction * len(dataset) + 0.5))
    if n_val == 0 or n_val == len(dataset):
        raise ValueError(f"split of {len(dataset)} samples at {fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(order[n_val:])), dataset.subset(np.sort(order[:n_val]))
