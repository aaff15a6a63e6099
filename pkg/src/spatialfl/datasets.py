"""Source datasets and their binding to spatial data points.

Every data point of a partition is bound once to a training sample of the
point's class. UEs that capture the same point therefore hold literally the
same sample.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from spatialfl.learner import ClientDataset

IDX_LABEL_MAGIC = 2049
IDX_IMAGE_MAGIC = 2051
CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072


class DatasetError(ValueError):
    pass


@dataclass
class SourceDataset:
    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    num_classes: int = 10
    centers: np.ndarray | None = None  # synthetic class means, when known

    @property
    def input_dim(self):
        return self.train_features.shape[1]

    @cached_property
    def per_class_index(self):
        """For each class, the ascending train indices carrying that label."""
        return [np.flatnonzero(self.train_labels == c) for c in range(self.num_classes)]

    @property
    def test_set(self):
        return ClientDataset(self.test_features, self.test_labels)


def _read(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_payload(raw, expected_magic, path):
    if len(raw) < 8:
        raise DatasetError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise DatasetError(f"{path}: bad IDX magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) != header + size:
        raise DatasetError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Parse an IDX image/label pair; pixels scaled into [0, 1]."""
    images = _idx_payload(_read(images_path), IDX_IMAGE_MAGIC, images_path)
    labels = _idx_payload(_read(labels_path), IDX_LABEL_MAGIC, labels_path)
    if len(images) != len(labels):
        raise DatasetError(f"{len(images)} images but {len(labels)} labels")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return features, labels.astype(np.int64)


def load_cifar10(batch_paths):
    """Concatenate CIFAR-10 binary batches (1 label byte + 3072 channel-major pixels each)."""
    batch_paths = list(batch_paths)
    if not batch_paths:
        raise DatasetError("no CIFAR-10 batch files given")
    feats, labels = [], []
    for path in batch_paths:
        raw = _read(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DatasetError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if rec[:, 0].max() > 9:
            raise DatasetError(f"{path}: label byte {rec[:, 0].max()} out of range")
        labels.append(rec[:, 0].astype(np.int64))
        feats.append(rec[:, 1:].astype(np.float64) / 255.0)
    return np.concatenate(feats), np.concatenate(labels)


def load_fmnist(train_images, train_labels, test_images, test_labels) -> SourceDataset:
    xtr, ytr = load_idx(train_images, train_labels)
    xte, yte = load_idx(test_images, test_labels)
    return SourceDataset(xtr, ytr, xte, yte, 10)


def load_cifar10_source(train_batches, test_batches) -> SourceDataset:
    xtr, ytr = load_cifar10(train_batches)
    xte, yte = load_cifar10(test_batches)
    return SourceDataset(xtr, ytr, xte, yte, 10)


def _blob_centers(num_classes, dim, separation, rng, margin, tries=10000):
    centers = []
    for _ in range(tries):
        c = rng.uniform(margin, 1 - margin, size=dim)
        if all(np.linalg.norm(c - o) >= separation for o in centers):
            centers.append(c)
            if len(centers) == num_classes:
                return np.asarray(centers)
    raise DatasetError(f"could not place {num_classes} centers {separation} apart in [0,1]^{dim}")


def synthetic_blobs(num_classes, samples_per_class, dim, separation, rng, sigma=None,
                    test_per_class=None) -> SourceDataset:
    """Gaussian class blobs in the unit cube, clipped to [0, 1].

    Centres are pairwise at least ``separation`` apart; ``sigma`` defaults
    to ``separation / 6``.
    """
    if min(num_classes, samples_per_class, dim) < 1:
        raise ValueError("num_classes, samples_per_class and dim must be >= 1")
    sigma = separation / 6 if sigma is None else sigma
    test_per_class = samples_per_class if test_per_class is None else test_per_class
    centers = _blob_centers(num_classes, dim, separation, rng, margin=min(0.25, 2 * sigma))

    def draw(per_class):
        y = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
        x = centers[y] + rng.normal(0.0, sigma, size=(len(y), dim))
        return np.clip(x, 0.0, 1.0), y

    xtr, ytr = draw(samples_per_class)
    xte, yte = draw(test_per_class)
    return SourceDataset(xtr, ytr, xte, yte, num_classes, centers)


def bind_points(partition, source: SourceDataset, rng: np.random.Generator) -> np.ndarray:
    """Train-sample index for every data point, drawn with replacement within its class."""
    labels = partition.points.labels
    if labels is None:
        raise DatasetError("partition points are not labeled")
    binding = np.empty(len(labels), dtype=np.int64)
    per_class = source.per_class_index
    for c in np.unique(labels):
        where = np.flatnonzero(labels == c)
        if c >= len(per_class) or len(per_class[c]) == 0:
            raise DatasetError(f"class {c} has no training samples in the source dataset")
        pool = per_class[c]
        binding[where] = pool[rng.integers(len(pool), size=len(where))]
    return binding


class ClientPool:
    """Materializes UE datasets on demand from partition + source + binding."""

    def __init__(self, partition, source: SourceDataset, binding: np.ndarray):
        if len(binding) != len(partition.points):
            raise DatasetError("binding length differs from the number of points")
        self.partition = partition
        self.source = source
        self.binding = binding

    def __len__(self):
        return len(self.partition.ues)

    def sample_indices(self, k):
        return self.binding[self.partition.capture(k)]

    def size(self, k):
        return int(self.partition.offsets[k + 1] - self.partition.offsets[k])

    def __getitem__(self, k) -> ClientDataset:
        idx = self.sample_indices(k)
        return ClientDataset(self.source.train_features[idx], self.source.train_labels[idx])

    def labels(self, k):
        return self.source.train_labels[self.sample_indices(k)]
