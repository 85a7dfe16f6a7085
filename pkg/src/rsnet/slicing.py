"""Slice assignment, slice pooling (channelwise max) and slice unpooling.

Slices are indexed bottom-most first along the chosen axis. Pooling and
unpooling are linear-time gathers/scatters over points; their cost does not
depend on the slicing resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError

AXES = {"x": 0, "y": 1, "z": 2}

# quotients within this relative distance of an integer snap to it, so
# e.g. a 1 m span at r = 0.02 gives exactly 50 slices
_SNAP = 1e-9


@dataclass
class OpCounter:
    """Accumulates (point, channel) touch counts reported by the kernels."""

    pool: int = 0
    unpool: int = 0
    pool_backward: int = 0
    unpool_backward: int = 0

    @property
    def forward(self) -> int:
        return self.pool + self.unpool

    @property
    def total(self) -> int:
        return self.pool + self.unpool + self.pool_backward + self.unpool_backward

    def reset(self) -> None:
        self.pool = self.unpool = self.pool_backward = self.unpool_backward = 0


COUNTER = OpCounter()


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return AXES[axis.lower()]
        except KeyError:
            raise ConfigError(f"unknown axis {axis!r}") from None
    if axis not in (0, 1, 2):
        raise ConfigError(f"unknown axis {axis!r}")
    return int(axis)


def _snap(q: np.ndarray) -> np.ndarray:
    r = np.round(q)
    return np.where(np.abs(q - r) <= _SNAP * np.maximum(1.0, np.abs(q)), r, q)


@dataclass
class SliceAssignment:
    axis: int
    resolution: float
    coord_min: float
    num_slices: int
    slice_of_point: np.ndarray
    order: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.slice_of_point.shape[0]

    @property
    def members(self) -> list[np.ndarray]:
        """Point indices of each slice, ascending (the sets S_1..S_N)."""
        return [self.order[self.offsets[s] : self.offsets[s + 1]] for s in range(self.num_slices)]

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)


def assign_slices(coords: np.ndarray, axis, r: float) -> SliceAssignment:
    """Bin points into slices of thickness ``r`` along ``axis``.

    ``k = clamp(floor((c - c_min) / r), 0, N - 1)`` with
    ``N = max(1, ceil((c_max - c_min) / r))``.
    """
    if not r > 0:
        raise ConfigError(f"slicing resolution must be positive, got {r}")
    ax = _axis_index(axis)
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] < 1 or coords.shape[1] < 3:
        raise ShapeError(f"coords must be n x 3 with n >= 1, got {coords.shape}")
    c = coords[:, ax]
    lo, hi = float(c.min()), float(c.max())
    n_slices = max(1, int(math.ceil(_snap(np.array((hi - lo) / r)))))
    k = np.floor(_snap((c - lo) / r)).astype(np.int64)
    np.clip(k, 0, n_slices - 1, out=k)
    order = np.argsort(k, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(np.bincount(k, minlength=n_slices))])
    return SliceAssignment(ax, float(r), lo, n_slices, k, order, offsets)


@dataclass
class PoolRecord:
    argmax: np.ndarray
    empty_slice_mask: np.ndarray


def _check_rows(F, n, what):
    if F.ndim != 2 or F.shape[0] != n:
        raise ShapeError(f"{what}: expected {n} rows, got shape {F.shape}")


def slice_pool_forward(F: np.ndarray, a: SliceAssignment, counter: OpCounter | None = None):
    """Channelwise max over each slice. Returns ``(seq N x c, PoolRecord)``."""
    F = np.asarray(F)
    _check_rows(F, a.n, "slice_pool_forward")
    out, argmax, touches = _kernels.segment_max(F, a.slice_of_point, a.num_slices)
    (counter or COUNTER).pool += touches
    return out, PoolRecord(argmax, a.sizes() == 0)


def slice_pool_backward(grad_seq: np.ndarray, record: PoolRecord, a: SliceAssignment,
                        counter: OpCounter | None = None) -> np.ndarray:
    """Route each pooled gradient to the point that supplied the max."""
    grad, touches = _kernels.segment_max_backward(grad_seq, record.argmax, a.slice_of_point)
    (counter or COUNTER).pool_backward += touches
    return grad


def slice_unpool_forward(seq: np.ndarray, a: SliceAssignment, counter: OpCounter | None = None) -> np.ndarray:
    seq = np.asarray(seq)
    _check_rows(seq, a.num_slices, "slice_unpool_forward")
    out, touches = _kernels.gather_rows(seq, a.slice_of_point)
    (counter or COUNTER).unpool += touches
    return out


def slice_unpool_backward(grad_F: np.ndarray, a: SliceAssignment, counter: OpCounter | None = None) -> np.ndarray:
    grad_F = np.asarray(grad_F)
    _check_rows(grad_F, a.n, "slice_unpool_backward")
    out, touches = _kernels.segment_sum(grad_F, a.slice_of_point, a.num_slices)
    (counter or COUNTER).unpool_backward += touches
    return out


# -- batched layout used by the model ------------------------------------------


@dataclass
class BatchSlices:
    """Slice assignments of several cubes along one axis, flattened.

    ``seg`` holds a global slice id per point (cube offsets applied);
    ``pos`` maps each global slice to its row in a ``(T, B)`` padded layout.
    """

    seg: np.ndarray
    num_segments: int
    lengths: np.ndarray
    pos: np.ndarray
    max_len: int


def assign_batch(coords_list, axis, r: float) -> BatchSlices:
    segs, lengths = [], []
    offset = 0
    for coords in coords_list:
        a = assign_slices(coords, axis, r)
        segs.append(a.slice_of_point + offset)
        lengths.append(a.num_slices)
        offset += a.num_slices
    lengths = np.array(lengths, dtype=np.int64)
    batch = len(lengths)
    t_max = int(lengths.max())
    cube = np.repeat(np.arange(batch), lengths)
    step = np.arange(offset) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return BatchSlices(np.concatenate(segs), offset, lengths, step * batch + cube, t_max)
