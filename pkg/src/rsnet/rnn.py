"""Vanilla/GRU/LSTM cells, bidirectional layers and stacks over slice sequences.

Weights of one cell are packed gate-wise: ``Wx (c_in, g*h)``, ``Wh (h, g*h)``,
``b (g*h,)`` with gate order ``z, r, n`` (GRU) and ``i, f, g, o`` (LSTM).

The scans operate on a *grouped* layout ``X (T, G, B, c)``: G independent
weight sets (e.g. 3 axes x 2 directions), each applied to B sequences.
Every time step is a batched matmul over all groups, which keeps the Python
loop short.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nncore import init_params

VARIANTS = ("vanilla", "gru", "lstm")
GATES = {"vanilla": 1, "gru": 3, "lstm": 4}
DEFAULT_HIDDEN = (256, 128, 64, 64, 128, 256)


def _sigmoid(x):
    # tanh form cannot overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def check_variant(variant: str) -> str:
    v = variant.lower()
    if v not in VARIANTS:
        raise ConfigError(f"unknown RNN unit {variant!r}; expected one of {VARIANTS}")
    return v


@dataclass
class RnnCellParams:
    variant: str
    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray

    @property
    def input_size(self) -> int:
        return self.Wx.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.Wh.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}


def init_cell(variant: str, input_size: int, hidden_size: int, seed, dtype=np.float64) -> RnnCellParams:
    variant = check_variant(variant)
    g, h = GATES[variant], hidden_size
    Wx = init_params((input_size, g * h), input_size, h, [*np.atleast_1d(seed), 0])
    Wh = init_params((h, g * h), h, h, [*np.atleast_1d(seed), 1])
    b = np.zeros(g * h)
    if variant == "lstm":
        b[h : 2 * h] = 1.0
    return RnnCellParams(variant, Wx.astype(dtype), Wh.astype(dtype), b.astype(dtype))


# -- single step ---------------------------------------------------------------


def _step(variant, a, h, c, Wh):
    """One recurrence step given the input projection ``a = x Wx + b``."""
    hd = h.shape[-1]
    if variant == "vanilla":
        h_new = np.tanh(a + h @ Wh)
        return h_new, None, (h, h_new)
    if variant == "gru":
        u = h @ Wh[..., : 2 * hd]
        z = _sigmoid(a[..., :hd] + u[..., :hd])
        r = _sigmoid(a[..., hd : 2 * hd] + u[..., hd:])
        rh = r * h
        n = np.tanh(a[..., 2 * hd :] + rh @ Wh[..., 2 * hd :])
        h_new = (1 - z) * h + z * n
        return h_new, None, (h, z, r, n, rh)
    pre = a + h @ Wh
    i = _sigmoid(pre[..., :hd])
    f = _sigmoid(pre[..., hd : 2 * hd])
    g = np.tanh(pre[..., 2 * hd : 3 * hd])
    o = _sigmoid(pre[..., 3 * hd :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (h, c, i, f, g, o, tc)


def _step_back(variant, cache, dh, dc, Wh):
    """Reverse of ``_step``. Returns ``(d_pre, dh_prev, dc_prev)``.

    ``d_pre`` is the gradient of every gate pre-activation, which is both the
    gradient of ``a`` and of the recurrent product feeding that gate.
    """
    hd = dh.shape[-1]
    WhT = np.swapaxes(Wh, -1, -2)
    if variant == "vanilla":
        _, h_new = cache
        d_pre = dh * (1 - h_new * h_new)
        return d_pre, d_pre @ WhT, None
    if variant == "gru":
        h, z, r, n, rh = cache
        dn = dh * z * (1 - n * n)
        dz = dh * (n - h) * z * (1 - z)
        d_rh = dn @ WhT[..., 2 * hd :, :]
        dr = d_rh * h * r * (1 - r)
        d_pre = np.concatenate([dz, dr, dn], axis=-1)
        dh_prev = dh * (1 - z) + d_rh * r + d_pre[..., : 2 * hd] @ WhT[..., : 2 * hd, :]
        return d_pre, dh_prev, None
    h, c, i, f, g, o, tc = cache
    dc = dc + dh * o * (1 - tc * tc)
    d_pre = np.concatenate(
        [dc * g * i * (1 - i), dc * c * f * (1 - f), dc * i * (1 - g * g), dh * tc * o * (1 - o)],
        axis=-1,
    )
    return d_pre, d_pre @ WhT, dc * f


def _wh_inputs(variant, cache):
    """Left factors of ``dWh``: ``(h_prev, rh)`` for GRU, ``(h_prev,)`` else."""
    return (cache[0], cache[4]) if variant == "gru" else (cache[0],)


def _wh_grad(variant, hin, d_pre, hd):
    """``dWh`` from stacked left factors and pre-activation grads.

    ``hin[k]`` and ``d_pre`` have shape ``(G, M, *)``; returns ``(G, h, g*h)``.
    """
    if variant == "gru":
        top = np.swapaxes(hin[0], -1, -2) @ d_pre[..., : 2 * hd]
        bottom = np.swapaxes(hin[1], -1, -2) @ d_pre[..., 2 * hd :]
        return np.concatenate([top, bottom], axis=-1)
    return np.swapaxes(hin[0], -1, -2) @ d_pre


def _as_state(variant, state, hd_shape, dtype):
    if state is None:
        h = np.zeros(hd_shape, dtype)
        return h, (np.zeros(hd_shape, dtype) if variant == "lstm" else None)
    if variant == "lstm":
        return state
    return state, None


def cell_forward(variant, x, state, params: RnnCellParams):
    """One step of a cell for input ``x (..., c_in)``.

    ``state`` is ``h`` (or ``(h, c)`` for LSTM; ``None`` means zeros).
    Returns ``(new_state, cache)``.
    """
    variant = check_variant(variant)
    x = np.asarray(x)
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"cell input width {x.shape[-1]} != {params.input_size}")
    h, c = _as_state(variant, state, x.shape[:-1] + (params.hidden_size,), x.dtype)
    if h.shape[-1] != params.hidden_size:
        raise ShapeError(f"state width {h.shape[-1]} != {params.hidden_size}")
    a = x @ params.Wx + params.b
    h_new, c_new, cache = _step(variant, a, h, c, params.Wh)
    new_state = (h_new, c_new) if variant == "lstm" else h_new
    return new_state, (variant, x, cache, params)


def cell_backward(cache, grad_state):
    """Gradients of one step: ``(grad_x, grad_prev_state, grads)``."""
    variant, x, step_cache, params = cache
    hd = params.hidden_size
    if variant == "lstm":
        dh, dc = grad_state
    else:
        dh, dc = grad_state, None
    d_pre, dh_prev, dc_prev = _step_back(variant, step_cache, dh, dc, params.Wh)
    x2 = x.reshape(-1, x.shape[-1])
    d2 = d_pre.reshape(-1, d_pre.shape[-1])
    hin = tuple(v.reshape(-1, hd) for v in _wh_inputs(variant, step_cache))
    grads = {"Wx": x2.T @ d2, "Wh": _wh_grad(variant, hin, d2, hd), "b": d2.sum(axis=0)}
    grad_x = d_pre @ params.Wx.T
    return grad_x, ((dh_prev, dc_prev) if variant == "lstm" else dh_prev), grads


# -- grouped scan ---------------------------------------------------------------


def scan_forward(variant, X, Wx, Wh, b):
    """Run ``T`` steps from a zero state. ``X (T, G, B, c)`` -> ``H (T, G, B, h)``."""
    T, G, B, c = X.shape
    hd = Wh.shape[1]
    Xg = X.transpose(1, 0, 2, 3).reshape(G, T * B, c)
    A = (Xg @ Wx + b[:, None, :]).reshape(G, T, B, -1).transpose(1, 0, 2, 3)
    h = np.zeros((G, B, hd), X.dtype)
    cell = np.zeros((G, B, hd), X.dtype) if variant == "lstm" else None
    H = np.empty((T, G, B, hd), X.dtype)
    caches = []
    for t in range(T):
        h, cell, sc = _step(variant, A[t], h, cell, Wh)
        H[t] = h
        caches.append(sc)
    return H, (variant, Xg, Wx, Wh, caches, X.shape)


def scan_backward(cache, dH):
    """Backprop through time. Returns ``(dX, dWx, dWh, db)``."""
    variant, Xg, Wx, Wh, caches, (T, G, B, c) = cache
    hd = Wh.shape[1]
    dh = np.zeros((G, B, hd), dH.dtype)
    dc = np.zeros((G, B, hd), dH.dtype) if variant == "lstm" else None
    d_pre = np.empty((T, G, B, Wh.shape[2]), dH.dtype)
    for t in range(T - 1, -1, -1):
        d_pre[t], dh, dc = _step_back(variant, caches[t], dH[t] + dh, dc, Wh)
    dA = d_pre.transpose(1, 0, 2, 3).reshape(G, T * B, -1)
    dWx = np.swapaxes(Xg, 1, 2) @ dA
    db = dA.sum(axis=1)
    dX = (dA @ np.swapaxes(Wx, 1, 2)).reshape(G, T, B, c).transpose(1, 0, 2, 3)
    hin = tuple(
        np.stack(parts).transpose(1, 0, 2, 3).reshape(G, T * B, hd)
        for parts in zip(*(_wh_inputs(variant, sc) for sc in caches))
    )
    dWh = _wh_grad(variant, hin, dA, hd)
    return dX, dWx, dWh, db


def reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """Time index reversing each sequence within its own length.

    ``lengths (A, B)`` -> ``idx (T, A, B)``; padding positions map to
    themselves, so applying the gather twice is the identity.
    """
    t = np.arange(T)[:, None, None]
    L = lengths[None]
    return np.where(t < L, L - 1 - t, t)


def _gather_time(Y, idx):
    A, B = idx.shape[1:]
    return Y[idx, np.arange(A)[None, :, None], np.arange(B)[None, None, :]]


def birnn_grouped_forward(variant, Y, lengths, fwd, bwd):
    """Bidirectional layer over ``Y (T, A, B, c)`` with SUM merge.

    ``fwd`` and ``bwd`` are ``(Wx, Wh, b)`` stacked over the ``A`` groups.
    Outputs at padded positions are unspecified.
    """
    T, A = Y.shape[:2]
    idx = reverse_index(lengths, T)
    X = np.concatenate([Y, _gather_time(Y, idx)], axis=1)
    Wx, Wh, b = (np.concatenate([f, r]) for f, r in zip(fwd, bwd))
    H, cache = scan_forward(variant, X, Wx, Wh, b)
    out = H[:, :A] + _gather_time(H[:, A:], idx)
    return out, (cache, idx, A)


def birnn_grouped_backward(cache, d_out):
    scan_cache, idx, A = cache
    dH = np.concatenate([d_out, _gather_time(d_out, idx)], axis=1)
    dX, dWx, dWh, db = scan_backward(scan_cache, dH)
    dY = dX[:, :A] + _gather_time(dX[:, A:], idx)
    return dY, (dWx[:A], dWh[:A], db[:A]), (dWx[A:], dWh[A:], db[A:])


def stack_grouped_forward(variant, Y, lengths, layers):
    """Apply bidirectional layers in order; ``layers[l] = (fwd, bwd)``."""
    caches = []
    for fwd, bwd in layers:
        Y, cache = birnn_grouped_forward(variant, Y, lengths, fwd, bwd)
        caches.append(cache)
    return Y, caches


def stack_grouped_backward(caches, d_out):
    grads = []
    for cache in reversed(caches):
        d_out, gf, gb = birnn_grouped_backward(cache, d_out)
        grads.append((gf, gb))
    return d_out, grads[::-1]


# -- single-sequence API -----------------------------------------------------------


@dataclass
class BiRnnLayerParams:
    forward_cell: RnnCellParams
    backward_cell: RnnCellParams

    def __post_init__(self):
        f, b = self.forward_cell, self.backward_cell
        if (f.input_size, f.hidden_size) != (b.input_size, b.hidden_size) or f.variant != b.variant:
            raise ShapeError("forward and backward cells must agree in variant and sizes")


@dataclass
class RnnStackConfig:
    layer_hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN
    variant: str = "gru"
    direction_merge: str = "sum"

    def __post_init__(self):
        self.variant = check_variant(self.variant)
        self.layer_hidden_sizes = tuple(int(h) for h in self.layer_hidden_sizes)
        if not self.layer_hidden_sizes or min(self.layer_hidden_sizes) < 1:
            raise ConfigError("RNN stack needs at least one layer of positive width")
        if self.direction_merge != "sum":
            raise ConfigError("only SUM direction merge is supported")


def init_stack(config: RnnStackConfig, input_size: int, seed, dtype=np.float64) -> list[BiRnnLayerParams]:
    layers = []
    c = input_size
    for i, h in enumerate(config.layer_hidden_sizes):
        layers.append(
            BiRnnLayerParams(
                init_cell(config.variant, c, h, [*np.atleast_1d(seed), i, 0], dtype),
                init_cell(config.variant, c, h, [*np.atleast_1d(seed), i, 1], dtype),
            )
        )
        c = h
    return layers


def _layer_weights(layer: BiRnnLayerParams):
    f, b = layer.forward_cell, layer.backward_cell
    return (f.Wx[None], f.Wh[None], f.b[None]), (b.Wx[None], b.Wh[None], b.b[None])


def birnn_forward(seq: np.ndarray, layer: BiRnnLayerParams):
    """Bidirectional layer over one slice sequence ``seq (N, c)`` -> ``(N, h)``."""
    out, cache = stack_forward(seq, [layer])
    return out, cache


def stack_forward(seq: np.ndarray, layers: list[BiRnnLayerParams]):
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"sequence must be N x c with N >= 1, got {seq.shape}")
    if seq.shape[1] != layers[0].forward_cell.input_size:
        raise ShapeError(f"sequence width {seq.shape[1]} != {layers[0].forward_cell.input_size}")
    variant = layers[0].forward_cell.variant
    lengths = np.array([[seq.shape[0]]])
    Y, caches = stack_grouped_forward(variant, seq[:, None, None, :], lengths, [_layer_weights(l) for l in layers])
    return Y[:, 0, 0], caches


def stack_backward(caches, grad_out: np.ndarray):
    """Returns ``(grad_seq, grads)``; ``grads[l]`` is ``{"forward": {...}, "backward": {...}}``."""
    d_seq, grads = stack_grouped_backward(caches, grad_out[:, None, None, :])
    named = []
    for gf, gb in grads:
        named.append({
            "forward": dict(zip(("Wx", "Wh", "b"), (g[0] for g in gf))),
            "backward": dict(zip(("Wx", "Wh", "b"), (g[0] for g in gb))),
        })
    return d_seq[:, 0, 0], named
