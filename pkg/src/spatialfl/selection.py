"""Per-round participant selection.

``ClusterBased`` draws one user uniformly from each metadata cluster;
``UniformRandom`` is the baseline, a uniform sample without replacement.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from spatialfl import rng as rngs
from spatialfl.clustering import ClusterModel


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterBased:
    model: ClusterModel
    name: str = "cluster"

    def __post_init__(self):
        if any(len(m) == 0 for m in self.model.members):
            raise SelectionError("every cluster needs at least one member")


@dataclass(frozen=True)
class UniformRandom:
    population_size: int
    sample_size: int
    name: str = "random"

    def __post_init__(self):
        if not 1 <= self.sample_size <= self.population_size:
            raise SelectionError(
                f"sample_size must be in [1, {self.population_size}], got {self.sample_size}"
            )


@dataclass(frozen=True)
class SelectedSet:
    round: int
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)


POLICY_TAGS = {"cluster": 1, "random": 2}


def round_stream(seed, round, policy_name):
    """Selection stream for one round, keyed on (seed, round, policy)."""
    return rngs.stream(seed, rngs.SELECTION, POLICY_TAGS.get(policy_name, 0), round)


def select(policy, round: int, rng: np.random.Generator) -> SelectedSet:
    if isinstance(policy, ClusterBased):
        picks = []
        for members in policy.model.members:
            if len(members) == 0:
                raise SelectionError("empty cluster")
            picks.append(int(members[rng.integers(len(members))]))
        idx = np.asarray(picks, dtype=np.int64)
        assert len(np.unique(idx)) == policy.model.k
    elif isinstance(policy, UniformRandom):
        if policy.sample_size > policy.population_size:
            raise SelectionError("sample_size exceeds population")
        idx = np.sort(rng.choice(policy.population_size, size=policy.sample_size, replace=False))
        idx = idx.astype(np.int64)
    else:
        raise TypeError(f"unknown selection policy {policy!r}")
    return SelectedSet(round, idx)


def distinct_labels(partition, indices) -> int:
    """Number of classes present in the union of the given UEs' data."""
    labels = partition.points.labels
    if labels is None:
        raise ValueError("partition is not labeled")
    caps = [partition.capture(int(k)) for k in indices]
    if not caps:
        return 0
    return len(np.unique(labels[np.concatenate(caps)]))


def write_trace(path, rows) -> None:
    """Write ``(round, policy, indices)`` rows as CSV; indices are space separated."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "policy", "selected"])
        for rnd, name, idx in rows:
            w.writerow([rnd, name, " ".join(str(int(i)) for i in idx)])


def read_trace(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            (int(r["round"]), r["policy"], np.asarray(r["selected"].split(), dtype=np.int64))
            for r in reader
        ]
