"""Segment kernels behind slice pooling / unpooling.

Every kernel exists twice: a numba ``@njit`` loop and a pure-numpy version.
The numba path is used when numba imports and ``RSNET_NUMBA`` is not ``0``.
Both paths return identical results and identical point-touch counts; each
count is the number of (point, channel) entries the kernel read or wrote.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


def numba_enabled() -> bool:
    return HAVE_NUMBA and os.environ.get("RSNET_NUMBA", "1") != "0"


# -- numba -----------------------------------------------------------------


@njit(cache=True)
def _segment_max_nb(values, seg, nseg):
    n, c = values.shape
    out = np.zeros((nseg, c), dtype=values.dtype)
    argmax = np.full((nseg, c), -1, dtype=np.int64)
    touches = 0
    for j in range(n):
        s = seg[j]
        for ch in range(c):
            v = values[j, ch]
            a = argmax[s, ch]
            # strict comparison keeps the smallest index on ties
            if a < 0 or v > out[s, ch]:
                out[s, ch] = v
                argmax[s, ch] = j
            touches += 1
    return out, argmax, touches


@njit(cache=True)
def _segment_max_backward_nb(grad_seq, argmax, seg):
    n = seg.shape[0]
    c = grad_seq.shape[1]
    grad = np.zeros((n, c), dtype=grad_seq.dtype)
    touches = 0
    for j in range(n):
        s = seg[j]
        for ch in range(c):
            if argmax[s, ch] == j:
                grad[j, ch] = grad_seq[s, ch]
            touches += 1
    return grad, touches


@njit(cache=True)
def _gather_rows_nb(seq, seg):
    n = seg.shape[0]
    c = seq.shape[1]
    out = np.empty((n, c), dtype=seq.dtype)
    touches = 0
    for j in range(n):
        s = seg[j]
        for ch in range(c):
            out[j, ch] = seq[s, ch]
            touches += 1
    return out, touches


@njit(cache=True)
def _segment_sum_nb(values, seg, nseg):
    n, c = values.shape
    out = np.zeros((nseg, c), dtype=values.dtype)
    touches = 0
    for j in range(n):
        s = seg[j]
        for ch in range(c):
            out[s, ch] += values[j, ch]
            touches += 1
    return out, touches


# -- numpy -----------------------------------------------------------------


def _segment_max_np(values, seg, nseg):
    n, c = values.shape
    out = np.zeros((nseg, c), dtype=values.dtype)
    argmax = np.full((nseg, c), -1, dtype=np.int64)
    order = np.argsort(seg, kind="stable")
    sorted_seg = seg[order]
    present, starts = np.unique(sorted_seg, return_index=True)
    vals = values[order]
    seg_max = np.maximum.reduceat(vals, starts, axis=0)
    counts = np.diff(np.append(starts, n))
    hit = vals == np.repeat(seg_max, counts, axis=0)
    # within a segment rows are in ascending original index (stable sort),
    # so the minimum matching index is the first maximiser
    idx = np.where(hit, order[:, None], n)
    first = np.minimum.reduceat(idx, starts, axis=0)
    out[present] = seg_max
    argmax[present] = first
    return out, argmax, n * c


def _segment_max_backward_np(grad_seq, argmax, seg):
    n = seg.shape[0]
    c = grad_seq.shape[1]
    grad = np.zeros((n, c), dtype=grad_seq.dtype)
    s_idx, ch_idx = np.nonzero(argmax >= 0)
    grad[argmax[s_idx, ch_idx], ch_idx] = grad_seq[s_idx, ch_idx]
    return grad, n * c


def _gather_rows_np(seq, seg):
    return seq[seg], seg.shape[0] * seq.shape[1]


def _segment_sum_np(values, seg, nseg):
    n, c = values.shape
    out = np.zeros((nseg, c), dtype=values.dtype)
    # unbuffered, in point order: same summation order as the loop kernel
    np.add.at(out, seg, values)
    return out, n * c


# -- dispatch ----------------------------------------------------------------


def _prep(values, seg):
    return np.ascontiguousarray(values), np.ascontiguousarray(seg, dtype=np.int64)


def segment_max(values, seg, nseg, use_numba=None):
    """Per-segment channelwise max. Returns ``(out, argmax, touches)``.

    Empty segments give a zero row and ``argmax == -1``.
    """
    values, seg = _prep(values, seg)
    if numba_enabled() if use_numba is None else use_numba:
        out, argmax, t = _segment_max_nb(values, seg, nseg)
        return out, argmax, int(t)
    return _segment_max_np(values, seg, nseg)


def segment_max_backward(grad_seq, argmax, seg, use_numba=None):
    grad_seq, seg = _prep(grad_seq, seg)
    if numba_enabled() if use_numba is None else use_numba:
        g, t = _segment_max_backward_nb(grad_seq, np.ascontiguousarray(argmax), seg)
        return g, int(t)
    return _segment_max_backward_np(grad_seq, argmax, seg)


def gather_rows(seq, seg, use_numba=None):
    seq, seg = _prep(seq, seg)
    if numba_enabled() if use_numba is None else use_numba:
        out, t = _gather_rows_nb(seq, seg)
        return out, int(t)
    return _gather_rows_np(seq, seg)


def segment_sum(values, seg, nseg, use_numba=None):
    values, seg = _prep(values, seg)
    if numba_enabled() if use_numba is None else use_numba:
        out, t = _segment_sum_nb(values, seg, nseg)
        return out, int(t)
    return _segment_sum_np(values, seg, nseg)
