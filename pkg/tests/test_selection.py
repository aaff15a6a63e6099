import math

import numpy as np
import pytest

from spatialfl.clustering import ClusterModel, kmeans
from spatialfl.partition import WorldConfig, generate_partition
from spatialfl.selection import (ClusterBased, SelectionError, UniformRandom, distinct_labels,
                                 read_trace, round_stream, select, write_trace)


def singleton_model(idx):
    return ClusterModel(np.zeros((len(idx), 2)), [np.array([i]) for i in idx], 0.0)


def test_singletons_in_cluster_order():
    pol = ClusterBased(singleton_model([7, 2, 9]))
    assert select(pol, 1, np.random.default_rng(0)).indices.tolist() == [7, 2, 9]


def test_one_per_cluster_every_round():
    rng = np.random.default_rng(1)
    model = kmeans(rng.uniform(size=(60, 2)), 5, rng)
    pol = ClusterBased(model)
    for t in range(50):
        s = select(pol, t, rng)
        assert len(s) == 5 and len(np.unique(s.indices)) == 5
        for c, members in enumerate(model.members):
            assert s.indices[c] in members


def test_uniform_within_cluster():
    m = 4
    pol = ClusterBased(ClusterModel(np.zeros((1, 2)), [np.array([3, 8, 11, 20])], 0.0))
    rng = np.random.default_rng(2)
    rounds = 10000
    picks = np.array([select(pol, t, rng).indices[0] for t in range(rounds)])
    tol = 3 * math.sqrt((1 / m) * (1 - 1 / m) / rounds)
    for i in (3, 8, 11, 20):
        assert abs(np.mean(picks == i) - 1 / m) <= tol


def test_uniform_random_no_duplicates():
    pol = UniformRandom(50, 10)
    rng = np.random.default_rng(3)
    for t in range(100):
        s = select(pol, t, rng)
        assert len(np.unique(s.indices)) == 10
        assert s.indices.min() >= 0 and s.indices.max() < 50


def test_policy_validation():
    with pytest.raises(SelectionError):
        UniformRandom(5, 6)
    with pytest.raises(SelectionError):
        ClusterBased(ClusterModel(np.zeros((2, 2)), [np.array([0]), np.array([], dtype=int)], 0.0))


def test_round_keyed_streams():
    pol = UniformRandom(200, 10)
    a = select(pol, 5, round_stream(42, 5, "random")).indices
    b = select(pol, 5, round_stream(42, 5, "random")).indices
    c = select(pol, 6, round_stream(42, 6, "random")).indices
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_trace_roundtrip(tmp_path):
    rows = [(1, "cluster", np.array([3, 1, 4])), (2, "random", np.array([1, 5]))]
    write_trace(tmp_path / "t.csv", rows)
    back = read_trace(tmp_path / "t.csv")
    assert [(r, p, i.tolist()) for r, p, i in back] == [(r, p, i.tolist()) for r, p, i in rows]


def test_cluster_selection_covers_more_labels():
    part = generate_partition(WorldConfig(intensity=20, num_ues=200, seed=5), "region")
    model = kmeans(part.ues.positions, 10, np.random.default_rng(0))
    cb, ur = ClusterBased(model), UniformRandom(200, 10)
    c = [distinct_labels(part, select(cb, t, round_stream(5, t, "cluster")).indices) for t in range(300)]
    r = [distinct_labels(part, select(ur, t, round_stream(5, t, "random")).indices) for t in range(300)]
    assert np.mean(c) >= np.mean(r)
