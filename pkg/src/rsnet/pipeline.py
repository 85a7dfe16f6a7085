"""Scene -> cube decomposition, fixed-count sampling, features, vote merging."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CoverageError, EmptyCubeError
from .pcio import LabeledCloud

FEATURE_MODES = ("xyz3", "full9")


@dataclass
class BlockConfig:
    block_size_xy: float = 1.0
    train_stride: float = 1.0
    test_stride: float = 1.0
    points_per_cube: int = 4096
    feature_mode: str = "full9"
    resample_each_epoch: bool = True

    def __post_init__(self):
        self.feature_mode = self.feature_mode.lower()
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature_mode must be one of {FEATURE_MODES}, got {self.feature_mode!r}")
        if self.block_size_xy <= 0:
            raise ConfigError("block_size_xy must be positive")
        for name in ("train_stride", "test_stride"):
            stride = getattr(self, name)
            if stride <= 0:
                raise ConfigError(f"{name} must be positive")
            if stride > self.block_size_xy:
                raise ConfigError(f"{name}={stride} exceeds block size; cubes would leave gaps")
        if self.points_per_cube < 1:
            raise ConfigError("points_per_cube must be >= 1")

    @property
    def d_in(self) -> int:
        return 3 if self.feature_mode == "xyz3" else 9


@dataclass
class CubeSample:
    features: np.ndarray
    coords: np.ndarray
    source_indices: np.ndarray
    cube_origin: tuple[float, float]
    # lowest z of the whole cube (not just the sample); origin of local z
    cube_zmin: float = 0.0


def _grid(lo: float, hi: float, bs: float, stride: float) -> np.ndarray:
    span = hi - lo
    count = 1 if span < bs else math.floor((span - bs) / stride) + 2
    return lo + stride * np.arange(count)


def cube_origins(cloud: LabeledCloud, cfg: BlockConfig, stride: float | None = None):
    stride = cfg.test_stride if stride is None else stride
    xyz = cloud.xyz
    lo, hi = xyz.min(axis=0), xyz.max(axis=0)
    bs = cfg.block_size_xy
    return _grid(lo[0], hi[0], bs, stride), _grid(lo[1], hi[1], bs, stride)


def split_cubes(cloud: LabeledCloud, cfg: BlockConfig, stride: float | None = None):
    """Sliding-window xy columns. Returns ``[(origin, indices), ...]``, empty cubes dropped.

    Uses ``cfg.test_stride`` unless ``stride`` is given.
    """
    xs, ys = cube_origins(cloud, cfg, stride)
    bs = cfg.block_size_xy
    x, y = cloud.xyz[:, 0], cloud.xyz[:, 1]
    cubes = []
    for x0 in xs:
        in_x = (x >= x0) & (x < x0 + bs)
        if not in_x.any():
            continue
        for y0 in ys:
            idx = np.flatnonzero(in_x & (y >= y0) & (y < y0 + bs))
            if idx.size:
                cubes.append(((float(x0), float(y0)), idx))
    return cubes


def _cube_sample(idx, origin, zmin, cloud, cfg):
    coords = cloud.xyz[idx]
    return CubeSample(make_features_raw(coords, idx, (*origin, zmin), cloud, cfg), coords, idx, origin, zmin)


def _cube_frame(cube_indices, cloud, origin):
    xyz = cloud.xyz[cube_indices]
    if origin is None:
        origin = (float(xyz[:, 0].min()), float(xyz[:, 1].min()))
    return tuple(origin), float(xyz[:, 2].min())


def sample_fixed(cube_indices, cloud: LabeledCloud, cfg: BlockConfig, seed, origin=None) -> CubeSample:
    """Draw exactly ``points_per_cube`` points from one cube.

    Large cubes are sampled without replacement; small cubes keep every point
    once and fill the remainder by sampling with replacement.
    """
    cube_indices = np.asarray(cube_indices, dtype=np.int64)
    if cube_indices.size == 0:
        raise EmptyCubeError("cannot sample from an empty cube")
    rng = np.random.default_rng(seed)
    m, P = cube_indices.size, cfg.points_per_cube
    if m >= P:
        idx = rng.choice(cube_indices, P, replace=False)
    else:
        extra = rng.choice(cube_indices, P - m, replace=True)
        idx = rng.permutation(np.concatenate([cube_indices, extra]))
    return _cube_sample(idx, *_cube_frame(cube_indices, cloud, origin), cloud, cfg)


def sample_cover(cube_indices, cloud: LabeledCloud, cfg: BlockConfig, seed, origin=None) -> list[CubeSample]:
    """Test-time sampling: ``ceil(m / P)`` samples that together contain every point."""
    cube_indices = np.asarray(cube_indices, dtype=np.int64)
    if cube_indices.size == 0:
        raise EmptyCubeError("cannot sample from an empty cube")
    P = cfg.points_per_cube
    if cube_indices.size <= P:
        return [sample_fixed(cube_indices, cloud, cfg, seed, origin)]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(cube_indices)
    chunks = -(-perm.size // P)
    pad = chunks * P - perm.size
    if pad:
        perm = np.concatenate([perm, rng.choice(cube_indices, pad, replace=False)])
    frame = _cube_frame(cube_indices, cloud, origin)
    return [_cube_sample(part, *frame, cloud, cfg) for part in perm.reshape(chunks, P)]


def make_features_raw(coords, source_indices, frame, cloud: LabeledCloud, cfg: BlockConfig) -> np.ndarray:
    """Features for ``coords``; ``frame`` is the cube's ``(x0, y0, z_min)``."""
    local = coords - np.asarray(frame, dtype=np.float64)
    if cfg.feature_mode == "xyz3":
        return local
    if cloud.d_raw != 6:
        raise ConfigError("full9 features need RGB columns (d_raw = 6)")
    lo = cloud.xyz.min(axis=0)
    span = cloud.xyz.max(axis=0) - lo
    norm = np.divide(coords - lo, span, out=np.zeros_like(coords), where=span > 0)
    return np.hstack([local, cloud.points[source_indices, 3:6], norm])


def make_features(sample: CubeSample, cloud: LabeledCloud, cfg: BlockConfig) -> np.ndarray:
    """Input features of a cube sample.

    xyz3: cube-local xyz (origin at the cube corner, z from the cube's minimum).
    full9: cube-local xyz, rgb, xyz normalised by the scene bounding box.
    """
    frame = (*sample.cube_origin, sample.cube_zmin)
    return make_features_raw(sample.coords, sample.source_indices, frame, cloud, cfg)


class MergeAccumulator:
    """Per-point class vote counts across overlapping cube predictions."""

    def __init__(self, n_points: int, num_classes: int):
        self.votes = np.zeros((n_points, num_classes), dtype=np.int64)

    def add(self, source_indices, predicted) -> None:
        np.add.at(self.votes, (np.asarray(source_indices), np.asarray(predicted)), 1)

    def merge(self, other: "MergeAccumulator") -> "MergeAccumulator":
        self.votes += other.votes
        return self


def merge_votes(acc: MergeAccumulator) -> np.ndarray:
    """Majority label per point; ties go to the smallest class index."""
    missing = acc.votes.sum(axis=1) == 0
    if missing.any():
        raise CoverageError(f"{int(missing.sum())} points received no prediction")
    return acc.votes.argmax(axis=1)
