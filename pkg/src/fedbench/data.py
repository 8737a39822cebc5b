"""Datasets, on-disk loaders and participant partitioning."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InvalidInputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise InvalidInputError(
                f"features {x.shape} and labels {y.shape} do not describe n rows"
            )
        if len(y) < 1:
            raise InvalidInputError("a dataset needs at least one example")
        if self.num_classes < 2:
            raise InvalidInputError(f"num_classes must be >= 2, got {self.num_classes}")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("features must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


@dataclass(frozen=True)
class PartitionPlan:
    """Training-example indices held by each participant.

    ``dropped`` lists indices left out so that every shard has the same size.
    """

    assignments: list[np.ndarray]
    scheme: str
    shards_per_client: int = 0
    dropped: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def num_participants(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]


# -- loaders ----------------------------------------------------------------------

def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = path.read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(path, len(raw), f"file too short for a {header}-byte IDX header")
    found = struct.unpack_from(">I", raw, 0)[0]
    if found != magic:
        raise DataFormatError(path, 0, f"bad magic number 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = int(np.prod(dims))
    if len(raw) - header < expected:
        raise DataFormatError(
            path, len(raw), f"truncated: header promises {expected} data bytes, "
            f"found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def _mnist_split(root: Path, images_name: str, labels_name: str) -> Dataset:
    images = _read_idx(root / images_name, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(root / labels_name, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise DataFormatError(
            root / labels_name, 4,
            f"label count {len(labels)} does not match image count {len(images)} "
            f"in {images_name}"
        )
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), 10)


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    """Load the four uncompressed MNIST IDX files from ``directory``."""
    root = Path(directory)
    train = _mnist_split(root, MNIST_FILES["train_images"], MNIST_FILES["train_labels"])
    test = _mnist_split(root, MNIST_FILES["test_images"], MNIST_FILES["test_labels"])
    return train, test


def mnist_available(directory) -> bool:
    root = Path(directory)
    return all((root / name).is_file() for name in MNIST_FILES.values())


def _read_cifar(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DataFormatError(
            path, len(raw) - len(raw) % CIFAR_RECORD,
            f"length {len(raw)} is not a positive multiple of {CIFAR_RECORD}-byte records"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(path, int(bad[0]) * CIFAR_RECORD, f"label {labels[bad[0]]} > 9")
    return records[:, 1:].astype(np.float64) / 255.0, labels


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    """Load the CIFAR-10 binary version (``data_batch_1..5.bin``, ``test_batch.bin``).

    Pixels stay in the on-disk channel-major order (1024 R, 1024 G, 1024 B).
    """
    root = Path(directory)
    parts = [_read_cifar(root / name) for name in CIFAR_TRAIN_FILES]
    train = Dataset(np.concatenate([p[0] for p in parts]),
                    np.concatenate([p[1] for p in parts]), 10)
    tx, ty = _read_cifar(root / CIFAR_TEST_FILE)
    return train, Dataset(tx, ty, 10)


def cifar10_available(directory) -> bool:
    root = Path(directory)
    return all((root / n).is_file() for n in [*CIFAR_TRAIN_FILES, CIFAR_TEST_FILE])


def generate_synthetic(n: int, d: int, k: int, separation: float, seed: int) -> Dataset:
    """Gaussian blobs with unit covariance, one per class.

    Class means sit at ``separation`` times orthonormal directions (random unit
    directions when ``k > d``), so ``separation=0`` makes the classes
    indistinguishable. Labels are balanced to within one example.
    """
    if k < 2 or n < k or d < 1:
        raise InvalidInputError(f"need n >= k >= 2 and d >= 1, got n={n}, k={k}, d={d}")
    rng = np.random.default_rng(seed)
    if k <= d:
        q, _ = np.linalg.qr(rng.standard_normal((d, k)))
        directions = q.T
    else:
        directions = rng.standard_normal((k, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % k)
    features = separation * directions[labels] + rng.standard_normal((n, d))
    return Dataset(features, labels, k)


def export_csv(data: Dataset, path) -> None:
    """Write ``label,f0,...,f{d-1}`` rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", *(f"f{j}" for j in range(data.dim))])
        for label, row in zip(data.labels, data.features):
            writer.writerow([int(label), *(repr(float(v)) for v in row)])


def subset(data: Dataset, indices) -> Dataset:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise InvalidInputError("subset needs at least one index")
    if idx.min() < 0 or idx.max() >= len(data):
        raise InvalidInputError(f"index out of range for a dataset of {len(data)} rows")
    return Dataset(data.features[idx], data.labels[idx], data.num_classes)


def subsample(data: Dataset, n: int, seed: int) -> Dataset:
    """Seeded subsample of ``n`` rows kept in original order (whole set if smaller)."""
    if n >= len(data):
        return data
    rng = np.random.default_rng(seed)
    return subset(data, np.sort(rng.choice(len(data), size=n, replace=False)))


# -- partitioning ------------------------------------------------------------------

def partition_iid(data: Dataset, p: int, seed: int) -> PartitionPlan:
    n = len(data)
    if p < 1 or p > n:
        raise InvalidInputError(f"need 1 <= p <= n, got p={p}, n={n}")
    order = np.random.default_rng(seed).permutation(n)
    return PartitionPlan(list(np.array_split(order, p)), "iid")


def partition_shards(data: Dataset, p: int, shards_per_client: int, seed: int) -> PartitionPlan:
    """Label-sorted shards, ``shards_per_client`` drawn at random per participant."""
    if p < 1 or shards_per_client < 1:
        raise InvalidInputError(
            f"p and shards_per_client must be >= 1, got {p} and {shards_per_client}"
        )
    num_shards = p * shards_per_client
    shard_size = len(data) // num_shards
    if shard_size == 0:
        raise InvalidInputError(
            f"{len(data)} examples cannot fill {num_shards} shards of size >= 1"
        )
    by_label = np.argsort(data.labels, kind="stable")
    usable = num_shards * shard_size
    shards = by_label[:usable].reshape(num_shards, shard_size)
    draw = np.random.default_rng(seed).permutation(num_shards).reshape(p, shards_per_client)
    assignments = [shards[row].ravel() for row in draw]
    return PartitionPlan(assignments, "shards", shards_per_client, by_label[usable:])
