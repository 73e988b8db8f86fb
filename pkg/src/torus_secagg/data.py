"""Datasets: IDX (MNIST) ingestion, synthetic Gaussian blobs, IID partitioning."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, DataError, DataFormatError

MNIST_DIR_ENV = "TORUS_SECAGG_MNIST_DIR"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

_UBYTE = 0x08


class IDXLengthError(DataFormatError):
    """The IDX payload is shorter than its header declares."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``(n, f)`` with integer labels in ``[0, n_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("one label per sample required")
        if self.n_classes < 2:
            raise DataError("at least two classes required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.n_classes)


# --- IDX ---------------------------------------------------------------------


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX payload.

    Layout: two zero bytes, type byte 0x08, dimension count, one big-endian
    uint32 per dimension, then the raw bytes in C order.
    """
    if len(data) < 4:
        raise IDXLengthError("IDX header truncated")
    zero0, zero1, dtype, ndim = data[:4]
    if zero0 != 0 or zero1 != 0:
        raise DataFormatError("bad IDX magic: first two bytes must be zero")
    if dtype != _UBYTE:
        raise DataFormatError(f"unsupported IDX type byte 0x{dtype:02x}; only 0x08 (ubyte) is accepted")
    if ndim == 0:
        raise DataFormatError("IDX file declares zero dimensions")
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IDXLengthError("IDX dimension table truncated")
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    size = int(np.prod(dims, dtype=np.int64))
    payload = data[header_end:]
    if len(payload) < size:
        raise IDXLengthError(f"IDX payload has {len(payload)} bytes, header declares {size}")
    if len(payload) > size:
        raise DataFormatError(f"IDX payload has {len(payload) - size} trailing bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def serialize_idx(array: np.ndarray) -> bytes:
    """Inverse of :func:`parse_idx` for uint8 arrays."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise DataFormatError(f"only uint8 arrays can be written as IDX, got {arr.dtype}")
    if not 1 <= arr.ndim <= 255:
        raise DataFormatError("IDX supports 1 to 255 dimensions")
    header = bytes([0, 0, _UBYTE, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def read_idx_file(path: os.PathLike | str) -> np.ndarray:
    """Read an IDX file, gunzipping when the name ends in ``.gz``."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def write_idx_file(path: os.PathLike | str, array: np.ndarray) -> None:
    path = Path(path)
    payload = serialize_idx(array)
    if path.suffix == ".gz":
        # mtime=0 keeps the archive byte-identical across rebuilds
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def scale_pixels(images: np.ndarray) -> np.ndarray:
    """uint8 images ``(n, rows, cols)`` to float features in [0, 1], flattened."""
    return images.reshape(images.shape[0], -1).astype(np.float64) / 255.0


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).is_file():
            return directory / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory: os.PathLike | str) -> Tuple[Dataset, Dataset]:
    """Load ``(train, test)`` from a directory holding the four MNIST IDX files."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"MNIST directory {directory} does not exist")
    arrays = {key: read_idx_file(_find(directory, stem)) for key, stem in MNIST_FILES.items()}
    out = []
    for split in ("train", "test"):
        images, labels = arrays[f"{split}_images"], arrays[f"{split}_labels"]
        if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
            raise DataFormatError(f"inconsistent {split} image/label files")
        out.append(Dataset(scale_pixels(images), labels.astype(np.int64), 10))
    return out[0], out[1]


def bundled_mnist_dir() -> Path:
    """Directory of the packaged 1,000-sample MNIST subset (plus a 1,000-sample test split)."""
    return Path(str(resources.files("torus_secagg") / "fixtures" / "mnist"))


def load_mnist_subset() -> Tuple[Dataset, Dataset]:
    return load_mnist(bundled_mnist_dir())


def resolve_mnist_dir(explicit: Optional[str] = None) -> Path:
    """Explicit path, else ``$TORUS_SECAGG_MNIST_DIR``."""
    value = explicit or os.environ.get(MNIST_DIR_ENV)
    if not value:
        raise FileNotFoundError(f"no MNIST directory configured; set {MNIST_DIR_ENV} or mnist_dir")
    return Path(value)


# --- synthetic data ------------------------------------------------------------


def synth_blobs(C: int, n: int, f: int, separation: float, seed: int) -> Dataset:
    """Gaussian classes around ``separation * u_c`` for random unit directions ``u_c``.

    Labels are balanced (counts differ by at most one) and shuffled.
    """
    if C < 2:
        raise ConfigurationError("C >= 2 required")
    if n < C:
        raise ConfigurationError("n >= C required")
    if f < 1:
        raise ConfigurationError("f >= 1 required")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((C, f))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions
    labels = rng.permutation(np.arange(n) % C)
    features = means[labels] + rng.standard_normal((n, f))
    return Dataset(features, labels.astype(np.int64), C)


# --- partitioning --------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Disjoint, exhaustive index shards, one per client."""

    shards: Tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.shards)

    def sizes(self) -> List[int]:
        return [s.size for s in self.shards]


def partition_iid(ds: Dataset | int, K: int, seed: int) -> Partition:
    """Random permutation split into ``K`` shards whose sizes differ by at most one."""
    n = ds if isinstance(ds, int) else len(ds)
    if K < 1:
        raise ConfigurationError("K >= 1 required")
    if K > n:
        raise ConfigurationError(f"cannot split {n} samples across {K} clients")
    perm = np.random.default_rng(seed).permutation(n)
    return Partition(tuple(np.sort(s) for s in np.array_split(perm, K)))
