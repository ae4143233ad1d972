"""Dataset ingestion: IDX files, CSV, and synthetic generators."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .hybrid import Dataset

# IDX type code -> big-endian numpy dtype
IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("="): k for k, v in IDX_TYPES.items()}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) into an array of its declared shape."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in IDX_TYPES:
        raise FormatError(f"{path}: bad IDX magic 0x{int.from_bytes(raw[:4], 'big'):08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = IDX_TYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[header:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, dims {dims} need {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise FormatError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    body = array.astype(IDX_TYPES[code]).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + body)


def load_idx_pair(images_path, labels_path) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.uint8:
        x /= 255.0
    return Dataset(x, labels.astype(np.int64))


# ---------------------------------------------------------------------------
# synthetic generators


def _balanced_counts(n: int, classes: int) -> list[int]:
    base, extra = divmod(n, classes)
    return [base + (1 if c < extra else 0) for c in range(classes)]


def synthetic_blobs(classes: int, dim: int, n: int, seed: int, spread: float = 1.0) -> Dataset:
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=4.0, size=(classes, dim))
    xs, ys = [], []
    for c, count in enumerate(_balanced_counts(n, classes)):
        xs.append(centers[c] + spread * rng.normal(size=(count, dim)))
        ys.append(np.full(count, c))
    x, y = np.concatenate(xs), np.concatenate(ys)
    perm = rng.permutation(n)
    return Dataset(x[perm], y[perm])


def concentric_shells(n: int, dim: int, seed: int, radii=(1.0, 2.0), noise: float = 0.1) -> Dataset:
    """Two classes on noisy hyperspheres of different radius around the origin."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c, count in enumerate(_balanced_counts(n, len(radii))):
        direction = rng.normal(size=(count, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        r = radii[c] + noise * rng.normal(size=(count, 1))
        xs.append(direction * r)
        ys.append(np.full(count, c))
    x, y = np.concatenate(xs), np.concatenate(ys)
    perm = rng.permutation(n)
    return Dataset(x[perm], y[perm])


def synthetic_regression(n: int, dim: int, seed: int, noise: float = 0.05) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, dim))
    w = rng.normal(size=dim)
    y = np.sin(x @ w) + 0.5 * np.cos(2.0 * x[:, 0]) + noise * rng.normal(size=n)
    return Dataset(x, y)


def load_csv(path, label_column: int = -1) -> Dataset:
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    labels = table[:, label_column]
    features = np.delete(table, label_column % table.shape[1], axis=1)
    if np.allclose(labels, np.round(labels)):
        labels = labels.astype(np.int64)
    return Dataset(features, labels)


# ---------------------------------------------------------------------------
# splitting and scaling


def stratified_split(data: Dataset, fraction: float, seed: int, stratify: bool = True) -> tuple[Dataset, Dataset]:
    """Split into (first, second) with ``fraction`` of each class in ``second``."""
    rng = np.random.default_rng(seed)
    if stratify:
        second = []
        for c in np.unique(data.labels):
            idx = np.flatnonzero(data.labels == c)
            rng.shuffle(idx)
            second.extend(idx[: int(round(fraction * len(idx)))])
        mask = np.zeros(len(data), dtype=bool)
        mask[np.asarray(second, dtype=np.int64)] = True
    else:
        perm = rng.permutation(len(data))
        mask = np.zeros(len(data), dtype=bool)
        mask[perm[: int(round(fraction * len(data)))]] = True
    return data.subset(np.flatnonzero(~mask)), data.subset(np.flatnonzero(mask))


class MinMaxScaler:
    """Per-feature [0, 1] scaling fitted on training data; other splits are clipped."""

    def fit(self, x: np.ndarray) -> "MinMaxScaler":
        self.lo = x.min(axis=0)
        span = x.max(axis=0) - self.lo
        self.span = np.where(span > 0, span, 1.0)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.lo) / self.span, 0.0, 1.0)


@dataclass
class DatasetSpec:
    kind: str = "concentric_shells"
    n_train: int = 1000
    n_test: int = 400
    dim: int = 8
    classes: int = 2
    seed: int = 7
    val_fraction: float = 0.2
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    path: str | None = None
    test_path: str | None = None
    extra: dict = field(default_factory=dict)

    KINDS = ("synthetic_blobs", "concentric_shells", "synthetic_regression", "mnist_subset", "csv")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; expected one of {self.KINDS}")

    @property
    def task(self) -> str:
        return "regression" if self.kind == "synthetic_regression" else "classification"


def _generate(spec: DatasetSpec, n: int, seed: int) -> Dataset:
    if spec.kind == "synthetic_blobs":
        return synthetic_blobs(spec.classes, spec.dim, n, seed)
    if spec.kind == "concentric_shells":
        return concentric_shells(n, spec.dim, seed)
    return synthetic_regression(n, spec.dim, seed)


def load_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Return (train, val, test) with features scaled to [0, 1] using training statistics."""
    if spec.kind in ("synthetic_blobs", "concentric_shells", "synthetic_regression"):
        full = _generate(spec, spec.n_train + spec.n_test, spec.seed)
        pool, test = full.subset(np.arange(spec.n_train)), full.subset(np.arange(spec.n_train, len(full)))
    elif spec.kind == "mnist_subset":
        if not (spec.images and spec.labels):
            raise ConfigError("mnist_subset needs 'images' and 'labels' paths")
        pool = load_idx_pair(spec.images, spec.labels)
        if spec.test_images and spec.test_labels:
            test = load_idx_pair(spec.test_images, spec.test_labels)
        else:
            pool, test = stratified_split(pool, spec.n_test / max(len(pool), 1), spec.seed)
        rng = np.random.default_rng(spec.seed)
        pool = pool.subset(np.sort(rng.permutation(len(pool))[: spec.n_train]))
        test = test.subset(np.sort(rng.permutation(len(test))[: spec.n_test]))
    else:
        if not spec.path:
            raise ConfigError("csv dataset needs 'path'")
        pool = load_csv(spec.path)
        if spec.test_path:
            test = load_csv(spec.test_path)
        else:
            pool, test = stratified_split(pool, 0.2, spec.seed, stratify=spec.task == "classification")
    train, val = stratified_split(pool, spec.val_fraction, spec.seed + 1, stratify=spec.task == "classification")
    if spec.kind != "mnist_subset":
        scaler = MinMaxScaler().fit(train.features)
        train, val, test = (Dataset(scaler.transform(d.features), d.labels) for d in (train, val, test))
    return train, val, test
