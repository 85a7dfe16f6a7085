"""Finite-difference checks for every differentiable operation in the package.

Each case builds random float64 inputs from a seed, jitters values away from
the ReLU kink and from max-pool ties, and compares the analytic gradient of a
random linear functional of the output against central differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model as M
from . import rnn, slicing
from .nncore import GradCheckReport, grad_check, linear_pointwise_backward, linear_pointwise_forward, relu, relu_backward

EPS = 1e-5
TOL = 1e-4


def _away_from_zero(x, gap=1e-3):
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def case_linear(seed):
    rng = np.random.default_rng(seed)
    n, ci, co = rng.integers(1, 9), rng.integers(1, 7), rng.integers(1, 7)
    R = rng.normal(size=(n, co))

    def fn(a):
        out = linear_pointwise_forward(a["F"], a["W"], a["b"])
        gF, gW, gb = linear_pointwise_backward(a["F"], a["W"], R)
        return float((out * R).sum()), {"F": gF, "W": gW, "b": gb}

    return fn, {"F": rng.normal(size=(n, ci)), "W": rng.normal(size=(ci, co)), "b": rng.normal(size=co)}


def case_relu(seed):
    rng = np.random.default_rng(seed)
    F = _away_from_zero(rng.normal(size=(6, 5)))
    R = rng.normal(size=F.shape)

    def fn(a):
        return float((relu(a["F"]) * R).sum()), {"F": relu_backward(a["F"], R)}

    return fn, {"F": F}


def _tie_free_features(rng, n, c):
    # distinct values per channel, spaced well beyond EPS
    return np.stack([rng.permutation(n) * 0.01 + rng.normal(0, 1e-3, n) for _ in range(c)], axis=1)


def case_slice_pool(seed):
    rng = np.random.default_rng(seed)
    n, c = 40, 4
    coords = rng.random((n, 3))
    a_ = slicing.assign_slices(coords, "z", 0.1)
    R = rng.normal(size=(a_.num_slices, c))

    def fn(a):
        seq, rec = slicing.slice_pool_forward(a["F"], a_)
        return float((seq * R).sum()), {"F": slicing.slice_pool_backward(R, rec, a_)}

    return fn, {"F": _tie_free_features(rng, n, c)}


def case_slice_unpool(seed):
    rng = np.random.default_rng(seed)
    n, c = 30, 3
    a_ = slicing.assign_slices(rng.random((n, 3)), "x", 0.15)
    R = rng.normal(size=(n, c))

    def fn(a):
        out = slicing.slice_unpool_forward(a["seq"], a_)
        return float((out * R).sum()), {"seq": slicing.slice_unpool_backward(R, a_)}

    return fn, {"seq": rng.normal(size=(a_.num_slices, c))}


def case_pool_unpool(seed):
    """Pool -> unpool composite, i.e. each point receives its slice max."""
    rng = np.random.default_rng(seed)
    n, c = 50, 3
    a_ = slicing.assign_slices(rng.random((n, 3)), "y", 0.2)
    R = rng.normal(size=(n, c))

    def fn(a):
        seq, rec = slicing.slice_pool_forward(a["F"], a_)
        out = slicing.slice_unpool_forward(np.tanh(seq), a_)
        g_seq = slicing.slice_unpool_backward(R, a_) * (1 - np.tanh(seq) ** 2)
        return float((out * R).sum()), {"F": slicing.slice_pool_backward(g_seq, rec, a_)}

    return fn, {"F": _tie_free_features(rng, n, c)}


def _cell_case(variant, seed, steps=5):
    rng = np.random.default_rng(seed)
    ci, h, B = 3, 4, 2
    p = rnn.init_cell(variant, ci, h, seed)
    xs = rng.normal(size=(steps, B, ci))
    R = rng.normal(size=(steps, B, h))
    arrays = {"x": xs, "Wx": p.Wx, "Wh": p.Wh, "b": p.b + rng.normal(0, 0.1, p.b.shape)}

    def fn(a):
        params = rnn.RnnCellParams(variant, a["Wx"], a["Wh"], a["b"])
        state, caches, loss = None, [], 0.0
        for t in range(steps):
            state, cache = rnn.cell_forward(variant, a["x"][t], state, params)
            h_t = state[0] if variant == "lstm" else state
            loss += float((h_t * R[t]).sum())
            caches.append(cache)
        grads = {k: np.zeros_like(v) for k, v in a.items()}
        dh = np.zeros((B, h))
        dc = np.zeros((B, h))
        for t in range(steps - 1, -1, -1):
            g_state = (dh + R[t], dc) if variant == "lstm" else dh + R[t]
            gx, g_prev, gp = rnn.cell_backward(caches[t], g_state)
            grads["x"][t] = gx
            for k in ("Wx", "Wh", "b"):
                grads[k] += gp[k]
            if variant == "lstm":
                dh, dc = g_prev
            else:
                dh = g_prev
        return loss, grads

    return fn, arrays


def _stack_case(variant, seed, hidden, n_steps, c_in=3):
    rng = np.random.default_rng(seed)
    layers = rnn.init_stack(rnn.RnnStackConfig(hidden, variant), c_in, seed)
    seq = rng.normal(size=(n_steps, c_in))
    R = rng.normal(size=(n_steps, hidden[-1]))
    arrays = {"seq": seq}
    for i, layer in enumerate(layers):
        for d, cell in (("forward", layer.forward_cell), ("backward", layer.backward_cell)):
            for k, v in cell.arrays().items():
                arrays[f"{i}.{d}.{k}"] = v + (rng.normal(0, 0.1, v.shape) if k == "b" else 0)

    def layers(a):
        return [
            rnn.BiRnnLayerParams(*(
                rnn.RnnCellParams(variant, a[f"{i}.{d}.Wx"], a[f"{i}.{d}.Wh"], a[f"{i}.{d}.b"])
                for d in ("forward", "backward")
            ))
            for i in range(len(hidden))
        ]

    def fn(a):
        out, cache = rnn.stack_forward(a["seq"], layers(a))
        d_seq, grads = rnn.stack_backward(cache, R)
        named = {"seq": d_seq}
        for i, g in enumerate(grads):
            for d in ("forward", "backward"):
                for k, v in g[d].items():
                    named[f"{i}.{d}.{k}"] = v
        return float((out * R).sum()), named

    def loss_fn(a):
        return float((rnn.stack_forward(a["seq"], layers(a))[0] * R).sum())

    return fn, arrays, loss_fn


def toy_config(variant="gru", ablate=False) -> M.RSNetConfig:
    return M.RSNetConfig(
        num_classes=3,
        d_in=3,
        input_channels=(4, 4),
        output_channels=(5,),
        rnn=rnn.RnnStackConfig((3, 3), variant),
        resolutions=(0.1, 0.1, 0.1),
        ablate_rnn=ablate,
    )


def case_rsnet(seed, variant="gru", n=32):
    rng = np.random.default_rng(seed)
    cfg = toy_config(variant)
    params = M.build_rsnet(cfg, seed, np.float64)
    # nonzero biases keep all-zero ReLU inputs off the kink
    params = {k: v + rng.normal(0, 0.05, v.shape) for k, v in params.items()}
    coords = rng.random((n, 3))
    labels = rng.integers(0, cfg.num_classes, n)
    weights = rng.uniform(0.5, 2.0, cfg.num_classes)

    def fn(a):
        p = {k: a[k] for k in params}
        logits, cache = M.rsnet_forward(a["features"], coords, p, cfg)
        loss, g = M.softmax_cross_entropy(logits, labels, weights)
        return loss, M.rsnet_backward(cache, g)

    def loss_fn(a):
        logits, _ = M.rsnet_forward(a["features"], coords, {k: a[k] for k in params}, cfg)
        return M.softmax_cross_entropy(logits, labels, weights)[0]

    return fn, {**params, "features": rng.normal(size=(n, cfg.d_in))}, loss_fn


def case_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    n, K = 7, 4
    labels = rng.integers(0, K, n)
    weights = rng.uniform(0.2, 3.0, K)

    def fn(a):
        loss, g = M.softmax_cross_entropy(a["logits"], labels, weights)
        return loss, {"logits": g}

    return fn, {"logits": rng.normal(size=(n, K)) * 3}


@dataclass
class Case:
    name: str
    # seed -> (fn, arrays) or (fn, arrays, forward-only loss_fn)
    build: Callable[[int], tuple]


CASES = [
    Case("linear", case_linear),
    Case("relu", case_relu),
    Case("slice_pool", case_slice_pool),
    Case("slice_unpool", case_slice_unpool),
    Case("pool_unpool", case_pool_unpool),
    *(Case(f"cell_{v}", lambda s, v=v: _cell_case(v, s)) for v in rnn.VARIANTS),
    *(Case(f"birnn_{v}", lambda s, v=v: _stack_case(v, s, (4,), 7)) for v in rnn.VARIANTS),
    Case("stack_6layer_toy", lambda s: _stack_case("gru", s, (4, 3, 2, 2, 3, 4), 6)),
    Case("stack_gru_toy", lambda s: _stack_case("gru", s, (4, 3), 6)),
    *(Case(f"rsnet_{v}", lambda s, v=v: case_rsnet(s, v)) for v in rnn.VARIANTS),
    Case("cross_entropy", case_cross_entropy),
]


def run_case(case: Case, seed: int, eps=EPS, tol=TOL, max_coords=200) -> GradCheckReport:
    fn, arrays, *loss_fn = case.build(seed)
    return grad_check(fn, arrays, eps=eps, tolerance=tol, max_coords=max_coords, seed=seed,
                      loss_fn=loss_fn[0] if loss_fn else None)


def run_suite(seeds=range(20), eps=EPS, tol=TOL, cases=None, max_coords=200, on_result=None):
    """Run every case over every seed; returns ``{case: worst_rel_error}``."""
    results = {}
    for case in cases or CASES:
        worst = 0.0
        for s in seeds:
            rep = run_case(case, s, eps, tol, max_coords)
            worst = max(worst, rep.worst)
        results[case.name] = worst
        if on_result is not None:
            on_result(case.name, worst, worst <= tol)
    return results
