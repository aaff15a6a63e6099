import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatialfl import partition as sp
from spatialfl.partition import PointCloud, UePlacement, WorldConfig


def test_world_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(side_length=0)
    with pytest.raises(ValueError):
        WorldConfig(sensing_radius=-1)
    with pytest.raises(ValueError):
        WorldConfig(intensity=-0.1)
    with pytest.raises(ValueError):
        WorldConfig(num_ues=0)
    with pytest.raises(ValueError):
        WorldConfig(num_classes=1)


def test_single_ue_in_square():
    w = WorldConfig(side_length=10, num_ues=1)
    pos = sp.sample_ue_positions(w, np.random.default_rng(0)).positions
    assert pos.shape == (1, 2)
    assert np.all(np.abs(pos) <= 5)


def test_ue_positions_uniform_mean():
    w = WorldConfig(side_length=10, num_ues=10000)
    pos = sp.sample_ue_positions(w, np.random.default_rng(1)).positions
    assert np.all(np.abs(pos) <= 5)
    # std error of each coordinate mean is 10/sqrt(12)/100 ~ 0.029
    assert np.all(np.abs(pos.mean(axis=0)) < 0.1)


def test_ue_positions_deterministic():
    w = WorldConfig(num_ues=50)
    a = sp.sample_ue_positions(w, np.random.default_rng(7)).positions
    b = sp.sample_ue_positions(w, np.random.default_rng(7)).positions
    assert a.tobytes() == b.tobytes()


def test_hppp_zero_intensity():
    assert len(sp.sample_hppp(WorldConfig(intensity=0), np.random.default_rng(0))) == 0


@pytest.mark.parametrize("margin,area", [("half", 144), ("full", 196)])
def test_hppp_count_mean_and_variance(margin, area):
    w = WorldConfig(side_length=10, sensing_radius=2, intensity=500, edge_margin=margin)
    mean = 500 * area
    counts = np.array([len(sp.sample_hppp(w, np.random.default_rng(s))) for s in range(200)])
    assert abs(counts[:50].mean() - mean) <= 3 * math.sqrt(mean / 50)
    assert 0.7 * mean <= counts.var(ddof=1) <= 1.3 * mean


@pytest.mark.parametrize("margin,half", [("half", 6.0), ("full", 7.0)])
def test_hppp_points_in_data_region(margin, half):
    w = WorldConfig(side_length=10, sensing_radius=2, intensity=20, edge_margin=margin)
    pts = sp.sample_hppp(w, np.random.default_rng(3)).positions
    assert np.all(np.abs(pts) <= half)
    assert np.abs(pts).max() > half - 0.5


def test_capture_examples():
    ues = UePlacement(np.array([[0.0, 0.0]]))
    off, idx = sp.assign_points_to_ues(ues, PointCloud(np.array([[0.0, 2.0]])), 2.0)
    assert idx.tolist() == [0]
    off, idx = sp.assign_points_to_ues(ues, PointCloud(np.array([[3.0, 0.0]])), 2.0)
    assert idx.tolist() == []


def test_capture_exhaustive_recheck():
    w = WorldConfig(side_length=10, sensing_radius=2, intensity=20, num_ues=50, seed=4)
    part = sp.generate_partition(w)
    assert len(part.points) <= 5000
    z = part.ues.positions
    p = part.points.positions
    for k in range(len(z)):
        d = p - z[k]
        inside = np.flatnonzero(d[:, 0] ** 2 + d[:, 1] ** 2 <= 4.0)
        cap = part.capture(k)
        np.testing.assert_array_equal(cap, inside)
        assert np.all(np.diff(cap) > 0)


def test_expected_samples():
    assert sp.expected_samples(500, 2) == pytest.approx(6283.185307179586, abs=1e-9)
    assert sp.expected_samples(0, 3.0) == 0
    assert sp.expected_samples(1, 1) == math.pi


def lens_monte_carlo(d, r, n, rng):
    # bounding box of the first disc
    pts = rng.uniform(-r, r, size=(n, 2))
    in_a = (pts ** 2).sum(axis=1) <= r * r
    in_b = ((pts - [d, 0.0]) ** 2).sum(axis=1) <= r * r
    return 4 * r * r * np.mean(in_a & in_b)


def test_circle_intersection_closed_form():
    assert sp.circle_intersection_area(0, 2) == pytest.approx(4 * math.pi)
    assert sp.circle_intersection_area(4, 2) == 0
    assert sp.circle_intersection_area(7, 2) == 0
    assert sp.circle_intersection_area(2, 2) == pytest.approx(4 * (2 * math.pi / 3 - math.sqrt(3) / 2))
    assert sp.circle_intersection_area(2, 2) == pytest.approx(4.913, abs=1e-3)


@pytest.mark.parametrize("d", [0.0, 0.5, 1.0, 2.0, 3.0, 3.9])
def test_circle_intersection_vs_monte_carlo(d):
    n = 400_000
    est = lens_monte_carlo(d, 2.0, n, np.random.default_rng(int(d * 10)))
    exact = sp.circle_intersection_area(d, 2.0)
    p = exact / 16
    sigma = 16 * math.sqrt(p * (1 - p) / n)
    assert abs(est - exact) <= 4 * sigma + 1e-12


def _shared_counts(d, lam, radius, seeds):
    w = WorldConfig(side_length=10, sensing_radius=radius, intensity=lam, num_ues=2)
    ues = UePlacement(np.array([[-d / 2, 0.0], [d / 2, 0.0]]))
    out = []
    for s in seeds:
        pts = sp.sample_hppp(w, np.random.default_rng(s))
        off, idx = sp.assign_points_to_ues(ues, pts, radius)
        out.append(len(np.intersect1d(idx[off[0]:off[1]], idx[off[1]:off[2]])))
    return np.array(out)


def test_shared_points_match_lens_area():
    lam, radius, d = 200.0, 2.0, 1.5
    counts = _shared_counts(d, lam, radius, range(100))
    mean = lam * sp.circle_intersection_area(d, radius)
    assert abs(counts.mean() - mean) <= 3 * math.sqrt(mean / len(counts))


def test_overlap_monotone_in_distance():
    ds = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 4.5, 6.0]
    means = [_shared_counts(d, 50.0, 2.0, range(150)).mean() for d in ds]
    assert all(a >= b for a, b in zip(means, means[1:]))
    assert means[-1] == 0 and means[-2] == 0


def test_per_ue_count_is_poisson():
    w = WorldConfig(side_length=10, sensing_radius=2, intensity=50, num_ues=5)
    assert w.edge_margin == "full"
    ues = sp.sample_ue_positions(w, np.random.default_rng(99))
    counts = []
    for s in range(400):
        pts = sp.sample_hppp(w, np.random.default_rng(1000 + s))
        off, _ = sp.assign_points_to_ues(ues, pts, 2.0)
        counts.append(np.diff(off))
    counts = np.array(counts)
    mean = sp.expected_samples(50, 2)
    assert mean >= 500
    for k in range(5):
        c = counts[:, k]
        assert abs(c.mean() - mean) <= 3 * math.sqrt(mean / len(c))
        assert 0.8 <= c.var(ddof=1) / c.mean() <= 1.2


def test_iid_labels():
    pts = PointCloud(np.zeros((72000, 2)))
    w1 = sp.label_points_iid(PointCloud(np.zeros((10, 2))), 1, np.random.default_rng(0))
    assert w1.labels.tolist() == [0] * 10
    lab = sp.label_points_iid(pts, 10, np.random.default_rng(5)).labels
    counts = np.bincount(lab, minlength=10)
    assert np.all(np.abs(counts - 7200) <= 3 * math.sqrt(72000 * 0.1 * 0.9))
    again = sp.label_points_iid(pts, 10, np.random.default_rng(5)).labels
    np.testing.assert_array_equal(lab, again)


def test_region_label_examples():
    w = WorldConfig(side_length=10, sensing_radius=2, edge_margin="half")
    pts = PointCloud(np.array([[-6.0, 0.0], [0.0, 3.0], [6.0, -1.0], [-4.79, 0.0], [5.99, 0.0]]))
    assert sp.label_points_region(pts, w).labels.tolist() == [0, 5, 9, 1, 9]


def test_region_label_examples_full_margin():
    w = WorldConfig(side_length=10, sensing_radius=2)
    pts = PointCloud(np.array([[-7.0, 0.0], [-6.0, 0.0], [0.0, 0.0], [6.0, 0.0], [7.0, 0.0]]))
    assert sp.label_points_region(pts, w).labels.tolist() == [0, 0, 5, 9, 9]


def test_clipped_discs_under_half_margin():
    # a corner UE loses part of its disc when the data region only extends R/2
    w = WorldConfig(side_length=10, sensing_radius=2, intensity=200, num_ues=1, edge_margin="half")
    ues = UePlacement(np.array([[5.0, 5.0]]))
    counts = [np.diff(sp.assign_points_to_ues(ues, sp.sample_hppp(w, np.random.default_rng(s)), 2)[0])[0]
              for s in range(30)]
    # two circular segments beyond distance 1 are cut off: about 63% of the disc remains
    assert np.mean(counts) < 0.7 * sp.expected_samples(200, 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["full", "half"]))
def test_region_labels_follow_strips(seed, margin):
    w = WorldConfig(side_length=10, sensing_radius=2, intensity=5, num_ues=20, seed=seed,
                    edge_margin=margin)
    part = sp.generate_partition(w, "region")
    h = w.data_half_width
    strip = np.clip(np.floor((part.points.positions[:, 0] + h) / (2 * h / 10)), 0, 9).astype(int)
    np.testing.assert_array_equal(part.points.labels, strip)
    # equal strip index implies equal label, and a UE whose disc sits inside one strip is single-label
    edges = -h + (2 * h / 10) * np.arange(11)
    for k, (x, _) in enumerate(part.ues.positions):
        if np.all(np.abs(edges - x) > 2) and part.counts[k] > 0:
            assert len(np.unique(part.ue_labels(k))) == 1


def test_single_label_ue_with_wide_strips():
    # 2 classes over a 6-wide region: strip [-3, 0) and [0, 3]; UE at x=-1.5, R=1 stays inside
    w = WorldConfig(side_length=4, sensing_radius=2, intensity=50, num_ues=1, num_classes=2)
    pts = sp.sample_hppp(w, np.random.default_rng(0))
    pts = sp.label_points_region(pts, w)
    off, idx = sp.assign_points_to_ues(UePlacement(np.array([[-1.5, 0.0]])), pts, 1.0)
    assert len(idx) > 0
    assert set(pts.labels[idx].tolist()) == {0}


def test_generate_deterministic_and_roundtrip(tmp_path):
    w = WorldConfig(side_length=10, sensing_radius=2, intensity=20, num_ues=30, seed=11)
    a = sp.generate_partition(w, "region")
    b = sp.generate_partition(w, "region")
    assert a.points.positions.tobytes() == b.points.positions.tobytes()
    assert a.indices.tobytes() == b.indices.tobytes()
    sp.save_partition(a, tmp_path / "a.json")
    sp.save_partition(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    c = sp.load_partition(tmp_path / "a.json")
    assert c.world == w and c.labeling == "region"
    assert c.points.positions.tobytes() == a.points.positions.tobytes()
    np.testing.assert_array_equal(c.points.labels, a.points.labels)
    np.testing.assert_array_equal(c.offsets, a.offsets)
    np.testing.assert_array_equal(c.indices, a.indices)
    doc = json.loads((tmp_path / "a.json").read_text())
    assert doc["seed"] == 11 and len(doc["capture_lists"]) == 30


def test_iid_and_region_share_geometry():
    w = WorldConfig(intensity=10, num_ues=10, seed=3)
    a = sp.generate_partition(w, "iid")
    b = sp.generate_partition(w, "region")
    assert a.points.positions.tobytes() == b.points.positions.tobytes()
    assert a.ues.positions.tobytes() == b.ues.positions.tobytes()


def test_load_rejects_foreign_json(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        sp.load_partition(tmp_path / "x.json")


def test_summary_mentions_expected():
    part = sp.generate_partition(WorldConfig(intensity=50, num_ues=20))
    text = sp.summarize(part)
    assert "expected=628.32" in text and "histogram" in text
