"""k-means over user metadata, run once before training.

Metadata is used raw; for locations all coordinates share units.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spatialfl import kernels

MAX_ITERS = 100
TOL = 1e-6


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (k, d)
    members: list  # k sorted int64 arrays of user indices
    inertia: float
    history: list = field(default_factory=list)  # inertia after each Lloyd iteration

    @property
    def k(self):
        return len(self.centroids)

    def labels(self, n=None):
        n = sum(len(m) for m in self.members) if n is None else n
        out = np.full(n, -1, dtype=np.int64)
        for c, m in enumerate(self.members):
            out[m] = c
        return out

    def to_dict(self):
        return {
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "members": [m.tolist() for m in self.members],
            "inertia": self.inertia,
        }

    @classmethod
    def from_dict(cls, doc):
        centroids = np.asarray(doc["centroids"], dtype=np.float64)
        members = [np.asarray(m, dtype=np.int64) for m in doc["members"]]
        if len(centroids) != doc["k"] or len(members) != doc["k"]:
            raise ValueError("cluster document is inconsistent with its k")
        return cls(centroids, members, float(doc["inertia"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_data(data):
    x = np.ascontiguousarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("metadata must be a 2-D array (users x features)")
    if not np.all(np.isfinite(x)):
        raise ValueError("metadata contains non-finite values")
    return x


def kmeans_plusplus(x, k, rng):
    """Indices of ``k`` seed points chosen by D^2 sampling."""
    n = len(x)
    chosen = [int(rng.integers(n))]
    _, d2 = kernels.nearest_centroid(x, x[chosen])
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            # every point coincides with a chosen seed
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rest[rng.integers(len(rest))])
        chosen.append(idx)
        _, d2_new = kernels.nearest_centroid(x, x[[idx]])
        d2 = np.minimum(d2, d2_new)
    return np.asarray(chosen)


def _repair_empty(labels, d2, k):
    """Move the farthest point of a cluster with >= 2 members into each empty cluster."""
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        donor_ok = counts[labels] > 1
        cand = np.flatnonzero(donor_ok)
        p = cand[np.argmax(d2[cand])]
        counts[labels[p]] -= 1
        labels[p] = c
        d2[p] = 0.0
        counts[c] = 1
    return labels


def _centroids(x, labels, k):
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    return sums / np.bincount(labels, minlength=k)[:, None]


def _inertia(x, labels, centroids):
    diff = x - centroids[labels]
    return float(np.sum(diff * diff))


def kmeans(data, k, rng, max_iters=MAX_ITERS, tol=TOL) -> ClusterModel:
    """Lloyd's algorithm from k-means++ seeds.

    Stops once no centroid moves more than ``tol`` or after ``max_iters``
    iterations. An emptied cluster takes the point farthest from its
    current centroid, so every returned member list is non-empty.
    """
    x = _as_data(data)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= number of users ({n}), got k={k}")
    if max_iters < 1 or tol < 0:
        raise ValueError("need max_iters >= 1 and tol >= 0")

    centroids = x[kmeans_plusplus(x, k, rng)].copy()
    history = []
    for _ in range(max_iters):
        labels, d2 = kernels.nearest_centroid(x, centroids)
        labels = _repair_empty(labels, d2, k)
        new = _centroids(x, labels, k)
        history.append(_inertia(x, labels, new))
        if len(history) > 1:
            assert history[-1] <= history[-2] * (1 + 1e-12) + 1e-12, "inertia increased"
        shift = np.sqrt(np.max(np.sum((new - centroids) ** 2, axis=1)))
        centroids = new
        if shift <= tol:
            break

    # final members are the nearest-centroid sets of the returned centroids
    labels, d2 = kernels.nearest_centroid(x, centroids)
    if np.bincount(labels, minlength=k).min() == 0:
        labels = _repair_empty(labels, d2, k)
        centroids = _centroids(x, labels, k)
    members = [np.flatnonzero(labels == c) for c in range(k)]
    return ClusterModel(centroids, members, _inertia(x, labels, centroids), history)


def assign(model: ClusterModel, x) -> int:
    """Nearest centroid for one metadata vector; ties go to the lowest index."""
    v = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if v.shape[1] != model.centroids.shape[1]:
        raise ValueError(f"dimension mismatch: {v.shape[1]} vs {model.centroids.shape[1]}")
    labels, _ = kernels.nearest_centroid(v, np.ascontiguousarray(model.centroids))
    return int(labels[0])
