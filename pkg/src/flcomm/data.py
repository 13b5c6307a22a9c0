"""Datasets and client partitioning.

Synthetic data is drawn from class-conditional Gaussian blobs. MNIST is
read from the standard IDX files (optionally gzipped), rooted at a config
path or the FLC_DATA_DIR environment variable. Partitioners return lists
of index arrays: stratified shards match global class proportions within
one sample per class; Dirichlet shards draw per-class client proportions
from a symmetric Dirichlet. Both repair empty shards by moving a sample
from the largest shard and are deterministic given the generator.
"""

import gzip
import os
import struct
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def make_blobs(n_classes: int, n_features: int, n_train: int, n_test: int,
               spread: float, rng: np.random.Generator,
               center_scale: float = 1.0):
    """Gaussian blobs with balanced classes; one draw order, fully seeded."""
    if n_classes < 2 or n_features < 1:
        raise ValueError("need at least 2 classes and 1 feature")
    if n_train < n_classes or n_test < n_classes:
        raise ValueError("need at least one sample per class in each split")
    centers = rng.normal(0.0, center_scale, (n_classes, n_features))

    def draw(n):
        counts = np.full(n_classes, n // n_classes)
        counts[: n % n_classes] += 1
        y = np.repeat(np.arange(n_classes), counts)
        x = centers[y] + spread * rng.normal(size=(n, n_features))
        return x, y

    x_train, y_train = draw(n_train)
    x_test, y_test = draw(n_test)
    return x_train, y_train, x_test, y_test


def _open_maybe_gzip(path: Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_be32(f) -> int:
    data = f.read(4)
    if len(data) != 4:
        raise ValueError("IDX file truncated in header")
    return struct.unpack(">I", data)[0]


def read_idx_images(path) -> np.ndarray:
    """(n, rows, cols) uint8 pixel array from an IDX image file."""
    with _open_maybe_gzip(Path(path)) as f:
        magic = _read_be32(f)
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x} in {path}")
        count, rows, cols = _read_be32(f), _read_be32(f), _read_be32(f)
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise ValueError(f"IDX image payload truncated in {path}")
        return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """(n,) uint8 label array from an IDX label file."""
    with _open_maybe_gzip(Path(path)) as f:
        magic = _read_be32(f)
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x} in {path}")
        count = _read_be32(f)
        raw = f.read(count)
        if len(raw) != count:
            raise ValueError(f"IDX label payload truncated in {path}")
        return np.frombuffer(raw, dtype=np.uint8)


def _find_idx_file(root: Path, names: tuple[str, ...]) -> Path:
    for name in names:
        for candidate in (root / name, root / (name + ".gz")):
            if candidate.exists():
                return candidate
    raise FileNotFoundError(
        f"none of {names} (or .gz variants) found under {root}"
    )


def mnist_root(configured: str | None = None) -> Path:
    root = configured or os.environ.get("FLC_DATA_DIR")
    if not root:
        raise FileNotFoundError(
            "MNIST path not configured: set dataset.path or FLC_DATA_DIR"
        )
    return Path(root)


def load_mnist(root, n_train: int | None = None, n_test: int | None = None):
    """Flattened [0,1] float features and integer labels; the optional
    subset sizes keep the leading samples of each split."""
    root = Path(root)
    xs = read_idx_images(_find_idx_file(root, MNIST_FILES["train_images"]))
    ys = read_idx_labels(_find_idx_file(root, MNIST_FILES["train_labels"]))
    xt = read_idx_images(_find_idx_file(root, MNIST_FILES["test_images"]))
    yt = read_idx_labels(_find_idx_file(root, MNIST_FILES["test_labels"]))
    if xs.shape[0] != ys.shape[0] or xt.shape[0] != yt.shape[0]:
        raise ValueError("image/label counts disagree")

    def prep(x, y, n):
        if n is not None:
            if n > x.shape[0]:
                raise ValueError(f"subset size {n} exceeds available {x.shape[0]}")
            x, y = x[:n], y[:n]
        return x.reshape(x.shape[0], -1).astype(np.float64) / 255.0, y.astype(np.int64)

    x_train, y_train = prep(xs, ys, n_train)
    x_test, y_test = prep(xt, yt, n_test)
    return x_train, y_train, x_test, y_test


def _repair_empty(shards: list[list[int]]) -> None:
    for i in range(len(shards)):
        while len(shards[i]) == 0:
            donor = max(range(len(shards)), key=lambda j: len(shards[j]))
            if len(shards[donor]) <= 1:
                raise ValueError("not enough samples to give every client one")
            shards[i].append(shards[donor].pop())


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def partition_stratified(labels: np.ndarray, num_clients: int,
                         rng: np.random.Generator) -> list[np.ndarray]:
    """IID shards: per class, an even split with the remainder spread over
    a random permutation of clients."""
    labels = np.asarray(labels)
    n = labels.size
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if num_clients > n:
        raise ValueError(f"num_clients={num_clients} exceeds dataset size {n}")
    shards: list[list[int]] = [[] for _ in range(num_clients)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        counts = np.full(num_clients, idx.size // num_clients, dtype=np.int64)
        extra = idx.size % num_clients
        if extra:
            counts[rng.permutation(num_clients)[:extra]] += 1
        start = 0
        for i, c in enumerate(counts):
            shards[i].extend(idx[start:start + c].tolist())
            start += c
    _repair_empty(shards)
    return [np.asarray(s, dtype=np.int64) for s in shards]


def partition_dirichlet(labels: np.ndarray, num_clients: int, alpha: float,
                        rng: np.random.Generator) -> list[np.ndarray]:
    """Non-IID shards: per class, client proportions drawn from
    Dirichlet(alpha,...,alpha) with largest-remainder rounding."""
    labels = np.asarray(labels)
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if num_clients > labels.size:
        raise ValueError(f"num_clients={num_clients} exceeds dataset size {labels.size}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    shards: list[list[int]] = [[] for _ in range(num_clients)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        props = rng.dirichlet(np.full(num_clients, alpha))
        counts = _largest_remainder(props, idx.size)
        start = 0
        for i, c in enumerate(counts):
            shards[i].extend(idx[start:start + c].tolist())
            start += c
    _repair_empty(shards)
    return [np.asarray(s, dtype=np.int64) for s in shards]
