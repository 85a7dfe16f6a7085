"""Full network: input block, three slicing branches, output block; losses.

A forward pass takes a batch of cubes. Points of all cubes are stacked
row-wise; slicing is done per cube, and the three axis branches run their
RNN stacks together as one grouped scan (axes x directions).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError, ValidationError
from .nncore import init_params, linear_pointwise_backward, linear_pointwise_forward, relu, relu_backward
from .rnn import GATES, RnnStackConfig, stack_grouped_backward, stack_grouped_forward
from .slicing import assign_batch

AXIS_NAMES = ("x", "y", "z")


@dataclass
class RSNetConfig:
    num_classes: int = 13
    d_in: int = 9
    input_channels: tuple[int, ...] = (64, 64, 64)
    output_channels: tuple[int, ...] = (512, 256)
    rnn: RnnStackConfig = field(default_factory=RnnStackConfig)
    resolutions: tuple[float, float, float] = (0.02, 0.02, 0.02)
    branch_merge: str = "concat"
    ablate_rnn: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if len(self.resolutions) != 3 or min(self.resolutions) <= 0:
            raise ConfigError(f"resolutions must be three positive values, got {self.resolutions}")
        if not self.input_channels:
            raise ConfigError("input block needs at least one layer")
        if self.branch_merge != "concat":
            raise ConfigError("only CONCAT branch merge is supported")
        self.input_channels = tuple(self.input_channels)
        self.output_channels = tuple(self.output_channels)
        self.resolutions = tuple(float(r) for r in self.resolutions)

    @property
    def branch_width(self) -> int:
        if self.ablate_rnn:
            return self.input_channels[-1]
        return self.rnn.layer_hidden_sizes[-1]

    @property
    def d_su(self) -> int:
        return 3 * self.branch_width

    def block_shapes(self):
        ins = [self.d_in, *self.input_channels]
        outs = [self.d_su, *self.output_channels, self.num_classes]
        return list(zip(ins[:-1], ins[1:])), list(zip(outs[:-1], outs[1:]))


def build_rsnet(config: RSNetConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Initialise every parameter; deterministic in ``seed``."""
    params: dict[str, np.ndarray] = {}
    counter = iter(range(1 << 30))
    in_shapes, out_shapes = config.block_shapes()
    for prefix, shapes in (("in", in_shapes), ("out", out_shapes)):
        for i, (a, b) in enumerate(shapes):
            params[f"{prefix}.{i}.W"] = init_params((a, b), a, b, [seed, next(counter)]).astype(dtype)
            params[f"{prefix}.{i}.b"] = np.zeros(b, dtype)
    if not config.ablate_rnn:
        variant = config.rnn.variant
        g = GATES[variant]
        for ax in AXIS_NAMES:
            c = config.input_channels[-1]
            for l, h in enumerate(config.rnn.layer_hidden_sizes):
                for d in ("fwd", "bwd"):
                    key = f"rnn.{ax}.{l}.{d}"
                    params[key + ".Wx"] = init_params((c, g * h), c, h, [seed, next(counter)]).astype(dtype)
                    params[key + ".Wh"] = init_params((h, g * h), h, h, [seed, next(counter)]).astype(dtype)
                    bias = np.zeros(g * h, dtype)
                    if variant == "lstm":
                        bias[h : 2 * h] = 1.0
                    params[key + ".b"] = bias
                c = h
    return params


def _rnn_layers(params, config):
    layers = []
    for l in range(len(config.rnn.layer_hidden_sizes)):
        pair = []
        for d in ("fwd", "bwd"):
            pair.append(tuple(
                np.stack([params[f"rnn.{ax}.{l}.{d}.{k}"] for ax in AXIS_NAMES]) for k in ("Wx", "Wh", "b")
            ))
        layers.append(tuple(pair))
    return layers


def _block_forward(X, params, prefix, count, last_linear):
    cache = []
    for i in range(count):
        W, b = params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"]
        pre = linear_pointwise_forward(X, W, b)
        cache.append((X, pre))
        X = pre if (last_linear and i == count - 1) else relu(pre)
    return X, cache


def _block_backward(dX, params, prefix, cache, last_linear, grads):
    for i in range(len(cache) - 1, -1, -1):
        X, pre = cache[i]
        if not (last_linear and i == len(cache) - 1):
            dX = relu_backward(pre, dX)
        dX, grads[f"{prefix}.{i}.W"], grads[f"{prefix}.{i}.b"] = linear_pointwise_backward(
            X, params[f"{prefix}.{i}.W"], dX
        )
    return dX


def forward_batch(params, config: RSNetConfig, features_list, coords_list):
    """Logits for a list of cubes, stacked row-wise. Returns ``(logits, cache)``."""
    if len(features_list) != len(coords_list) or not features_list:
        raise ShapeError("need matching, non-empty feature and coordinate lists")
    dtype = params["in.0.W"].dtype
    for f, c in zip(features_list, coords_list):
        if f.ndim != 2 or f.shape[1] != config.d_in or c.shape != (f.shape[0], 3) or f.shape[0] < 1:
            raise ShapeError(f"cube features {f.shape} / coords {c.shape} do not match d_in={config.d_in}")
    X = np.concatenate(features_list).astype(dtype, copy=False)
    n_in = len(config.input_channels)
    F_in, in_cache = _block_forward(X, params, "in", n_in, last_linear=False)

    batch = len(coords_list)
    slices = [assign_batch(coords_list, ax, config.resolutions[ax]) for ax in range(3)]
    pooled = [_kernels.segment_max(F_in, s.seg, s.num_segments) for s in slices]

    if config.ablate_rnn:
        rows = [p[0] for p in pooled]
        rnn_cache = None
    else:
        T = max(s.max_len for s in slices)
        c = F_in.shape[1]
        lengths = np.stack([s.lengths for s in slices])
        flat_idx = [(s.pos // batch) * (3 * batch) + a * batch + s.pos % batch for a, s in enumerate(slices)]
        packed = np.zeros((T * 3 * batch, c), dtype)
        for a in range(3):
            packed[flat_idx[a]] = pooled[a][0]
        Y, stack_cache = stack_grouped_forward(
            config.rnn.variant, packed.reshape(T, 3, batch, c), lengths, _rnn_layers(params, config)
        )
        Y = Y.reshape(T * 3 * batch, -1)
        rows = [Y[idx] for idx in flat_idx]
        rnn_cache = (stack_cache, flat_idx, T, c)

    F_su = np.concatenate([_kernels.gather_rows(r, s.seg)[0] for r, s in zip(rows, slices)], axis=1)
    logits, out_cache = _block_forward(F_su, params, "out", len(config.output_channels) + 1, last_linear=True)
    cache = (config, params, in_cache, slices, [p[1] for p in pooled], rnn_cache, out_cache, F_in.shape, batch)
    return logits, cache


def backward_batch(cache, grad_logits):
    """Gradients for every parameter plus ``"features"`` (stacked input rows)."""
    config, params, in_cache, slices, argmaxes, rnn_cache, out_cache, in_shape, batch = cache
    grads: dict[str, np.ndarray] = {}
    dF_su = _block_backward(grad_logits, params, "out", out_cache, True, grads)
    w = config.branch_width
    d_rows = [
        _kernels.segment_sum(np.ascontiguousarray(dF_su[:, a * w : (a + 1) * w]), s.seg, s.num_segments)[0]
        for a, s in enumerate(slices)
    ]
    if rnn_cache is None:
        d_pooled = d_rows
    else:
        stack_cache, flat_idx, T, c = rnn_cache
        dY = np.zeros((T * 3 * batch, w), grad_logits.dtype)
        for a in range(3):
            dY[flat_idx[a]] = d_rows[a]
        dP, layer_grads = stack_grouped_backward(stack_cache, dY.reshape(T, 3, batch, w))
        dP = dP.reshape(T * 3 * batch, c)
        d_pooled = [dP[idx] for idx in flat_idx]
        for l, (gf, gb) in enumerate(layer_grads):
            for d, g in (("fwd", gf), ("bwd", gb)):
                for k, arr in zip(("Wx", "Wh", "b"), g):
                    for a, ax in enumerate(AXIS_NAMES):
                        grads[f"rnn.{ax}.{l}.{d}.{k}"] = arr[a]
    dF_in = np.zeros(in_shape, grad_logits.dtype)
    for a, s in enumerate(slices):
        dF_in += _kernels.segment_max_backward(d_pooled[a], argmaxes[a], s.seg)[0]
    grads["features"] = _block_backward(dF_in, params, "in", in_cache, False, grads)
    return grads


def rsnet_forward(features, coords, params, config):
    """Single-cube forward: ``(n x d_in, n x 3) -> (n x K logits, cache)``."""
    return forward_batch(params, config, [np.asarray(features)], [np.asarray(coords, dtype=np.float64)])


def rsnet_backward(cache, grad_logits):
    return backward_batch(cache, grad_logits)


def softmax_cross_entropy(logits, labels, weights=None):
    """Class-weighted mean cross-entropy and its gradient w.r.t. ``logits``.

    loss = sum_i w[y_i] * nll_i / sum_i w[y_i]
    """
    n, K = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= K:
        raise ValidationError(f"label out of range [0, {K})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    w = np.ones(n, dtype=logits.dtype) if weights is None else np.asarray(weights, logits.dtype)[labels]
    total = w.sum()
    rows = np.arange(n)
    if total <= 0:
        return 0.0, np.zeros_like(logits)
    loss = float(-(w * log_p[rows, labels]).sum() / total)
    grad = np.exp(log_p)
    grad[rows, labels] -= 1
    grad *= (w / total)[:, None]
    return loss, grad.astype(logits.dtype, copy=False)


def median_freq_weights(label_counts) -> np.ndarray:
    """``w_c = median(freq of present classes) / freq_c``; absent classes get 0."""
    counts = np.asarray(label_counts, dtype=np.float64)
    if np.any(counts < 0) or counts.sum() <= 0:
        raise ValidationError("label counts must be non-negative with at least one positive")
    freq = counts / counts.sum()
    present = freq > 0
    med = np.median(freq[present])
    w = np.zeros_like(freq)
    w[present] = med / freq[present]
    return w
