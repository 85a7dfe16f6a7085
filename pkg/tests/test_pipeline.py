import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsnet.errors import ConfigError, CoverageError, EmptyCubeError
from rsnet.pcio import LabeledCloud, SceneSpec, generate_scene
from rsnet.pipeline import (
    BlockConfig,
    MergeAccumulator,
    cube_origins,
    make_features,
    merge_votes,
    sample_cover,
    sample_fixed,
    split_cubes,
)


def flat_cloud(xmax, ymax, n=400, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 3)) * [xmax, ymax, 1.0]
    pts[0, :2] = 0.0
    pts[1, :2] = [xmax, ymax]
    return LabeledCloud(pts)


def test_grid_example_three_cubes():
    c = flat_cloud(2.5, 0.5)
    xs, ys = cube_origins(c, BlockConfig())
    assert xs.tolist() == [0.0, 1.0, 2.0]
    assert ys.tolist() == [0.0]
    assert len(split_cubes(c, BlockConfig())) == 3


def test_half_stride_overlaps():
    c = flat_cloud(1.0, 0.5)
    cfg = BlockConfig(test_stride=0.5)
    xs, _ = cube_origins(c, cfg)
    assert xs.tolist() == [0.0, 0.5]
    hits = np.zeros(c.n, int)
    for _, idx in split_cubes(c, cfg):
        hits[idx] += 1
    x = c.xyz[:, 0]
    assert (hits[(x >= 0.5) & (x < 1.0)] == 2).all()


def test_stride_larger_than_block_rejected():
    with pytest.raises(ConfigError):
        BlockConfig(test_stride=1.5)
    with pytest.raises(ConfigError):
        BlockConfig(feature_mode="xyz6")


@pytest.mark.parametrize("frac", [0.2, 0.5, 1.0])
@pytest.mark.parametrize("seed", range(50))
def test_cubes_cover_every_point(seed, frac):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 500))
    pts = rng.random((n, 3)) * [rng.uniform(0.01, 4), rng.uniform(0.01, 4), 3] + rng.normal(0, 5, 3)
    bs = float(rng.choice([0.5, 1.0, 2.0]))
    cfg = BlockConfig(block_size_xy=bs, train_stride=bs, test_stride=frac * bs)
    covered = np.zeros(n, bool)
    for _, idx in split_cubes(LabeledCloud(pts), cfg):
        covered[idx] = True
    assert covered.all()


def test_cube_z_is_unbounded():
    pts = np.array([[0.1, 0.1, 0.0], [0.2, 0.2, 50.0]])
    cubes = split_cubes(LabeledCloud(pts), BlockConfig())
    assert len(cubes) == 1 and cubes[0][1].tolist() == [0, 1]


# -- sampling -----------------------------------------------------------------


def scene():
    return generate_scene(SceneSpec(seed=1, num_points=9000))


def test_exact_size_cube_is_permuted():
    c = scene()
    idx = np.arange(4096)
    s = sample_fixed(idx, c, BlockConfig(), seed=0)
    assert sorted(s.source_indices.tolist()) == idx.tolist()


def test_small_cube_keeps_all_points():
    c = scene()
    idx = np.arange(100, 110)
    s = sample_fixed(idx, c, BlockConfig(points_per_cube=16), seed=3)
    assert len(s.source_indices) == 16
    assert set(s.source_indices.tolist()) == set(idx.tolist())


def test_large_cube_no_duplicates():
    c = scene()
    s = sample_fixed(np.arange(8192), c, BlockConfig(), seed=5)
    assert len(np.unique(s.source_indices)) == 4096


def test_sampling_is_deterministic():
    c = scene()
    a = sample_fixed(np.arange(6000), c, BlockConfig(points_per_cube=512), seed=9)
    b = sample_fixed(np.arange(6000), c, BlockConfig(points_per_cube=512), seed=9)
    assert np.array_equal(a.source_indices, b.source_indices)
    assert np.array_equal(a.features, b.features)


def test_empty_cube_rejected():
    with pytest.raises(EmptyCubeError):
        sample_fixed(np.array([], int), scene(), BlockConfig(), seed=0)
    with pytest.raises(EmptyCubeError):
        sample_cover(np.array([], int), scene(), BlockConfig(), seed=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3000), st.sampled_from([64, 256, 1000]))
def test_cover_sampling_contains_every_point(m, P):
    c = scene()
    idx = np.random.default_rng(m).choice(c.n, m, replace=False)
    samples = sample_cover(idx, c, BlockConfig(points_per_cube=P), seed=m)
    assert len(samples) == -(-m // P)
    assert all(len(s.source_indices) == P for s in samples)
    assert set(np.concatenate([s.source_indices for s in samples]).tolist()) == set(idx.tolist())


# -- features -----------------------------------------------------------------------


def test_cube_corner_point_has_zero_local_coords():
    pts = np.array([[0.0, 0.0, 0.2], [0.5, 0.7, 1.0], [0.9, 0.1, 0.6]])
    c = LabeledCloud(pts)
    cfg = BlockConfig(points_per_cube=3, feature_mode="xyz3")
    (origin, idx), = split_cubes(c, cfg)
    s = sample_fixed(idx, c, cfg, seed=0, origin=origin)
    row = s.features[s.source_indices == 0][0]
    assert row.tolist() == [0.0, 0.0, 0.0]
    assert np.array_equal(make_features(s, c, cfg), s.features)


def test_normalised_coords_example():
    pts = np.zeros((3, 6))
    pts[1, :3] = 10.0
    pts[2, :3] = 5.0
    c = LabeledCloud(pts)
    s = sample_fixed(np.arange(3), c, BlockConfig(points_per_cube=3), seed=0)
    row = s.features[s.source_indices == 2][0]
    assert s.features.shape == (3, 9)
    assert row[6:].tolist() == [0.5, 0.5, 0.5]


def test_full9_columns_in_unit_range():
    c = scene()
    s = sample_fixed(np.arange(c.n), c, BlockConfig(points_per_cube=2048), seed=0)
    assert s.features.shape == (2048, 9)
    assert s.features[:, 3:].min() >= 0.0 and s.features[:, 3:].max() <= 1.0


def test_full9_needs_colour():
    c = LabeledCloud(np.random.default_rng(0).random((5, 3)))
    with pytest.raises(ConfigError):
        sample_fixed(np.arange(5), c, BlockConfig(points_per_cube=5), seed=0)


def test_local_z_starts_at_cube_minimum():
    c = scene()
    cfg = BlockConfig(points_per_cube=256, feature_mode="xyz3")
    for origin, idx in split_cubes(c, cfg)[:4]:
        s = sample_fixed(idx, c, cfg, seed=0, origin=origin)
        assert s.cube_zmin == c.xyz[idx, 2].min()
        assert s.features[:, 2].min() >= 0.0
        assert (s.features[:, :2] >= 0).all() and (s.features[:, :2] < cfg.block_size_xy).all()


# -- voting -----------------------------------------------------------------------


def test_majority_vote_examples():
    acc = MergeAccumulator(3, 6)
    acc.add([0, 0, 0], [4, 4, 3])  # chair twice, table once
    acc.add([1, 1], [0, 1])  # tie
    acc.add([2], [5])
    assert merge_votes(acc).tolist() == [4, 0, 5]


def test_missing_votes_raise():
    acc = MergeAccumulator(2, 2)
    acc.add([0], [1])
    with pytest.raises(CoverageError):
        merge_votes(acc)


def test_merge_adds_votes():
    a, b = MergeAccumulator(2, 2), MergeAccumulator(2, 2)
    a.add([0, 1], [1, 1])
    b.add([0, 0], [0, 0])
    assert merge_votes(a.merge(b)).tolist() == [0, 1]


@pytest.mark.parametrize("frac", [0.2, 0.5, 1.0])
def test_truthful_votes_recover_labels(frac):
    c = scene()
    cfg = BlockConfig(test_stride=frac, points_per_cube=1024)
    acc = MergeAccumulator(c.n, c.num_classes)
    for k, (origin, idx) in enumerate(split_cubes(c, cfg)):
        for s in sample_cover(idx, c, cfg, seed=k, origin=origin):
            acc.add(s.source_indices, c.labels[s.source_indices])
    assert np.array_equal(merge_votes(acc), c.labels)
