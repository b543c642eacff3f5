"""Datasets: MNIST from IDX files plus two seeded synthetic sets."""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class DatasetHandle:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    mean: float = 0.0
    std: float = 1.0

    @property
    def input_shape(self):
        return self.x_train.shape[1:]

    @property
    def classes(self):
        return int(max(self.y_train.max(), self.y_test.max())) + 1


def _read_idx(path, magic, ndim):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x} at byte offset 0, "
                          f"expected 0x{magic:08x}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    header = 4 + 4 * ndim
    expected = int(np.prod(dims))
    if len(raw) - header != expected:
        raise FormatError(f"{path}: payload has {len(raw) - header} bytes starting at byte "
                          f"offset {header}, header declares {expected}; "
                          f"file ends at byte offset {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path):
    return _read_idx(path, IMAGE_MAGIC, 3)


def read_idx_labels(path):
    return _read_idx(path, LABEL_MAGIC, 1)


def write_idx(path, array, magic):
    """Inverse of the readers (used by tests and fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def _load_split(directory, split):
    img_name, lbl_name = MNIST_FILES[split]
    images = read_idx_images(os.path.join(directory, img_name))
    labels = read_idx_labels(os.path.join(directory, lbl_name))
    if len(images) != len(labels):
        raise FormatError(f"{os.path.join(directory, lbl_name)}: {len(labels)} labels for "
                          f"{len(images)} images")
    if labels.size and labels.max() > 9:
        raise FormatError(f"{os.path.join(directory, lbl_name)}: label {labels.max()} "
                          f"outside 0-9")
    return images, labels


def load_mnist(path, normalize=True):
    """Read the four IDX files from ``path``.

    Pixels are scaled to [0, 1], then standardised with the training-set mean
    and std when ``normalize`` is set.  Images come back as (N, 1, 28, 28).
    """
    xtr, ytr = _load_split(path, "train")
    xte, yte = _load_split(path, "test")
    xtr = xtr.astype(np.float64)[:, None] / 255.0
    xte = xte.astype(np.float64)[:, None] / 255.0
    mean, std = 0.0, 1.0
    if normalize:
        mean, std = float(xtr.mean()), float(xtr.std())
        xtr = (xtr - mean) / std
        xte = (xte - mean) / std
    return DatasetHandle("mnist", xtr, ytr.astype(np.int64), xte, yte.astype(np.int64),
                         mean, std)


def _standardize(name, xtr, ytr, xte, yte):
    mean, std = xtr.mean(axis=0), xtr.std(axis=0)
    return DatasetHandle(name, (xtr - mean) / std, ytr, (xte - mean) / std, yte,
                         float(mean.mean()), float(std.mean()))


def synthetic_blobs(n_train=2000, n_test=500, classes=4, dim=8, spread=1.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 3.0, size=(classes, dim))

    def draw(n):
        y = rng.integers(0, classes, size=n)
        return centers[y] + spread * rng.normal(size=(n, dim)), y

    xtr, ytr = draw(n_train)
    xte, yte = draw(n_test)
    return _standardize("synthetic-blobs", xtr, ytr, xte, yte)


def synthetic_spirals(n_train=2000, n_test=500, classes=3, noise=0.1, seed=0):
    rng = np.random.default_rng(seed)

    def draw(n):
        y = rng.integers(0, classes, size=n)
        r = rng.uniform(0.05, 1.0, size=n)
        theta = 4.0 * r + 2 * np.pi * y / classes + noise * rng.normal(size=n)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1), y

    xtr, ytr = draw(n_train)
    xte, yte = draw(n_test)
    return _standardize("synthetic-spirals", xtr, ytr, xte, yte)


def load_dataset(name, data_dir=None, seed=0):
    if name == "mnist":
        if data_dir is None:
            raise ValueError("mnist needs a data directory holding the four IDX files")
        return load_mnist(data_dir)
    if name == "synthetic-blobs":
        return synthetic_blobs(seed=seed)
    if name == "synthetic-spirals":
        return synthetic_spirals(seed=seed)
    raise ValueError(f"unknown dataset {name!r}")
