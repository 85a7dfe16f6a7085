"""Cost measurements for slice pooling/unpooling.

``count_touches`` gives the instrumented (point, channel) touch count of one
pool + unpool round trip; ``time_kernels`` compares the numba and numpy paths
by wall clock.
"""
from __future__ import annotations

import time

import numpy as np

from . import _kernels
from .slicing import OpCounter, assign_slices, slice_pool_forward, slice_unpool_forward

RESOLUTIONS = (0.01, 0.02, 0.05, 0.08)
SIZES = (1024, 2048, 4096, 8192)


def random_cube(n: int, c: int, seed=0, span=1.0):
    rng = np.random.default_rng(seed)
    return rng.random((n, 3)) * span, rng.normal(size=(n, c))


def count_touches(n: int, r: float, c: int = 16, axis="z", seed=0) -> int:
    coords, F = random_cube(n, c, seed)
    counter = OpCounter()
    a = assign_slices(coords, axis, r)
    seq, _ = slice_pool_forward(F, a, counter)
    slice_unpool_forward(seq, a, counter)
    return counter.forward


def touch_table(sizes=SIZES, resolutions=RESOLUTIONS, c=16):
    """Rows of ``(n, r, touches)`` over the grid."""
    return [(n, r, count_touches(n, r, c)) for n in sizes for r in resolutions]


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def time_kernels(n=4096, c=64, r=0.02, repeat=5, seed=0) -> dict[str, dict[str, float]]:
    """Best-of-``repeat`` seconds per kernel for each backend.

    The numba path is warmed up first so compilation is not timed.
    """
    coords, F = random_cube(n, c, seed)
    a = assign_slices(coords, "z", r)
    seg, N = a.slice_of_point, a.num_slices
    seq = np.random.default_rng(seed).normal(size=(N, c))
    backends = {"numpy": False}
    if _kernels.HAVE_NUMBA:
        backends["numba"] = True
    out = {}
    for name, flag in backends.items():
        _, argmax, _ = _kernels.segment_max(F, seg, N, use_numba=flag)
        ops = {
            "segment_max": lambda: _kernels.segment_max(F, seg, N, use_numba=flag),
            "segment_max_backward": lambda: _kernels.segment_max_backward(seq, argmax, seg, use_numba=flag),
            "gather_rows": lambda: _kernels.gather_rows(seq, seg, use_numba=flag),
            "segment_sum": lambda: _kernels.segment_sum(F, seg, N, use_numba=flag),
        }
        for fn in ops.values():
            fn()  # warm-up / jit
        out[name] = {k: _best_of(fn, repeat) for k, fn in ops.items()}
    return out


def format_timings(timings: dict) -> str:
    kernels = list(next(iter(timings.values())))
    lines = [f"{'kernel':<22}" + "".join(f"{b:>12}" for b in timings) + ("     speedup" if len(timings) > 1 else "")]
    for k in kernels:
        row = f"{k:<22}" + "".join(f"{timings[b][k] * 1e3:>10.3f}ms" for b in timings)
        if "numba" in timings and "numpy" in timings:
            row += f"{timings['numpy'][k] / max(timings['numba'][k], 1e-12):>11.1f}x"
        lines.append(row)
    return "\n".join(lines)
