"""Datasets: synthetic Gaussian blobs, MNIST-style IDX files, CIFAR-10 binaries."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError
from .losses import one_hot

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# type code -> big-endian numpy dtype
_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_DTYPES.items()}

CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray  # one-hot [M, K]
    num_classes: int
    split: str = "train"
    stats: Optional[tuple] = None  # normalization (mean, std) applied at load time

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ConfigError("empty dataset")
        if len(self.inputs) != len(self.labels):
            raise ConfigError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.inputs)

    @property
    def class_ids(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.inputs[:n], self.labels[:n], self.num_classes, self.split, self.stats)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    perturbed: bool = False
    meta: dict = field(default_factory=dict)


def make_blobs(n_samples: int, n_classes: int, input_dim: int, spread: float, seed: int,
               label_noise: float = 0.0):
    """Gaussian clusters split 2:1 into train and test.

    Cluster means are random directions rescaled so the closest pair is
    exactly one unit apart; ``spread`` is the per-coordinate standard
    deviation. ``label_noise`` reassigns that fraction of *training* labels
    uniformly at random (the test split stays clean).
    """
    if n_classes < 2 or n_samples < 10 * n_classes or input_dim < 1:
        raise ConfigError(
            f"make_blobs needs K>=2, M>=10K and input_dim>=1 (got M={n_samples}, K={n_classes}, D={input_dim})"
        )
    if spread < 0 or not 0 <= label_noise <= 1:
        raise ConfigError("spread must be >= 0 and label_noise in [0, 1]")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_classes, input_dim))
    dists = np.linalg.norm(means[:, None] - means[None], axis=-1)
    dists[np.diag_indices(n_classes)] = np.inf
    means /= dists.min()

    labels = np.arange(n_samples) % n_classes
    inputs = means[labels] + spread * rng.standard_normal((n_samples, input_dim))
    # every third round of K samples goes to test, so both splits stay class-balanced
    is_test = (np.arange(n_samples) // n_classes) % 3 == 2
    noise_rng = np.random.default_rng([seed, 1])
    splits = []
    for name, mask in (("train", ~is_test), ("test", is_test)):
        idx = np.flatnonzero(mask)
        idx = idx[rng.permutation(idx.size)]
        y = labels[idx].copy()
        if name == "train" and label_noise > 0:
            flip = noise_rng.random(idx.size) < label_noise
            y[flip] = noise_rng.integers(n_classes, size=int(flip.sum()))
        splits.append(Dataset(inputs[idx], one_hot(y, n_classes), n_classes, name))
    return splits[0], splits[1]


# --- IDX ---------------------------------------------------------------------

def read_idx(path) -> np.ndarray:
    """Parse an IDX file into an array with its native dtype and dims."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at offset 0")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in _IDX_DTYPES:
        raise FormatError(f"{path}: bad magic number 0x{raw[:4].hex()} at offset 0")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = _IDX_DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    have = len(raw) - header_end
    if have != expected:
        raise FormatError(
            f"{path}: payload at offset {header_end} has {have} bytes, header declares {expected}"
        )
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array):
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise FormatError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(array.astype(_IDX_DTYPES[code]).tobytes())


def _standardize(x, stats):
    if stats is None:
        mean = float(x.mean())
        std = float(x.std())
        stats = (mean, std if std > 0 else 1.0)
    mean, std = stats
    return (x - mean) / std, stats


def load_idx(images_path, labels_path, num_classes: int = 10, stats=None, split: str = "train",
             limit: Optional[int] = None) -> Dataset:
    """Load an IDX image/label pair, scale pixels to [0, 1] and standardize.

    ``stats`` (mean, std) from a training split can be passed for a test split.
    """
    for p, magic in ((images_path, IDX_IMAGES_MAGIC), (labels_path, IDX_LABELS_MAGIC)):
        with open(p, "rb") as f:
            head = f.read(4)
        if len(head) < 4 or struct.unpack(">I", head)[0] != magic:
            raise FormatError(f"{p}: expected magic 0x{magic:08x} at offset 0, got 0x{head.hex() or '0'}")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images_path}: {images.shape[0]} images but {labels_path} has {labels.shape[0]} labels (offset 4)"
        )
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"{labels_path}: label {labels.max()} >= num_classes {num_classes}")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.astype(np.float64) / 255.0
    x = x.reshape(x.shape[0], 1, *x.shape[1:]) if x.ndim == 3 else x
    x, stats = _standardize(x, stats)
    return Dataset(x, one_hot(labels, num_classes), num_classes, split, stats)


# --- CIFAR-10 ------------------------------------------------------------------

def load_cifar_bin(paths: Sequence, stats=None, split: str = "train", limit: Optional[int] = None) -> Dataset:
    """Load CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record).

    Pixels are scaled to [0, 1] and standardized per channel.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    chunks = []
    for p in paths:
        with open(p, "rb") as f:
            raw = f.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            whole = len(raw) // CIFAR_RECORD * CIFAR_RECORD
            raise FormatError(
                f"{p}: length {len(raw)} is not a multiple of {CIFAR_RECORD} (partial record at offset {whole})"
            )
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks)
    labels = records[:, 0]
    if labels.max() >= 10:
        bad = int(np.argmax(labels >= 10))
        raise FormatError(f"label byte {labels[bad]} >= 10 in record {bad} (offset {bad * CIFAR_RECORD})")
    if limit is not None:
        records, labels = records[:limit], labels[:limit]
    x = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    if stats is None:
        mean = x.mean(axis=(0, 2, 3))
        std = x.std(axis=(0, 2, 3))
        stats = (mean, np.where(std > 0, std, 1.0))
    mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
    x = (x - mean[None, :, None, None]) / std[None, :, None, None]
    return Dataset(x, one_hot(labels, 10), 10, split, stats)


# --- batching --------------------------------------------------------------------

def shuffle_rng(shuffle_seed: int, epoch: int):
    return np.random.default_rng([int(shuffle_seed), int(epoch)])


def batches(ds: Dataset, batch_size: int, epoch: int, shuffle_seed: int) -> Iterator[Batch]:
    """Yield mini-batches from a permutation keyed by ``(shuffle_seed, epoch)``."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = shuffle_rng(shuffle_seed, epoch).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield Batch(ds.inputs[idx], ds.labels[idx], idx)


def num_batches(ds: Dataset, batch_size: int) -> int:
    return -(-len(ds) // batch_size)
