import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsnet.errors import ConfigError, ShapeError
from rsnet.rnn import (
    BiRnnLayerParams,
    RnnCellParams,
    RnnStackConfig,
    birnn_forward,
    cell_backward,
    cell_forward,
    init_cell,
    init_stack,
    stack_backward,
    stack_forward,
)

VARIANTS = ("vanilla", "gru", "lstm")
GATES = {"vanilla": 1, "gru": 3, "lstm": 4}


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def ref_cell(variant, x, h, c, p):
    """Scalar loops over the gate equations. Column blocks: GRU (z, r, n), LSTM (i, f, g, o)."""
    Wx, Wh, b = p.Wx, p.Wh, p.b
    H = len(h)

    def pre(col, hvec):
        s = b[col]
        for i in range(len(x)):
            s += x[i] * Wx[i, col]
        for i in range(H):
            s += hvec[i] * Wh[i, col]
        return s

    if variant == "vanilla":
        return [math.tanh(pre(j, h)) for j in range(H)], None
    if variant == "gru":
        z = [sig(pre(j, h)) for j in range(H)]
        r = [sig(pre(H + j, h)) for j in range(H)]
        rh = [r[i] * h[i] for i in range(H)]
        n = [math.tanh(pre(2 * H + j, rh)) for j in range(H)]
        return [(1 - z[j]) * h[j] + z[j] * n[j] for j in range(H)], None
    i_ = [sig(pre(j, h)) for j in range(H)]
    f = [sig(pre(H + j, h)) for j in range(H)]
    g = [math.tanh(pre(2 * H + j, h)) for j in range(H)]
    o = [sig(pre(3 * H + j, h)) for j in range(H)]
    c_new = [f[j] * c[j] + i_[j] * g[j] for j in range(H)]
    return [o[j] * math.tanh(c_new[j]) for j in range(H)], c_new


def ref_scan(variant, xs, p):
    H = p.hidden_size
    h, c, out = [0.0] * H, [0.0] * H, []
    for x in xs:
        h, c_new = ref_cell(variant, x, h, c, p)
        c = c_new if c_new is not None else c
        out.append(h)
    return np.array(out)


def ref_birnn(seq, layer):
    v = layer.forward_cell.variant
    fwd = ref_scan(v, seq, layer.forward_cell)
    bwd = ref_scan(v, seq[::-1], layer.backward_cell)[::-1]
    return fwd + bwd


def random_cell(variant, c_in, h, rng, scale=0.7):
    g = GATES[variant]
    return RnnCellParams(
        variant,
        rng.normal(0, scale, (c_in, g * h)),
        rng.normal(0, scale, (h, g * h)),
        rng.normal(0, scale, g * h),
    )


def random_layer(variant, c_in, h, rng):
    return BiRnnLayerParams(random_cell(variant, c_in, h, rng), random_cell(variant, c_in, h, rng))


# -- single cell ---------------------------------------------------------------


def test_gru_zero_params_example():
    p = RnnCellParams("gru", np.zeros((2, 3)), np.zeros((1, 3)), np.zeros(3))
    h, _ = cell_forward("gru", np.array([0.3, -2.0]), np.array([1.0]), p)
    assert h.tolist() == [0.5]


def test_vanilla_zero_params_ignores_inputs():
    p = RnnCellParams("vanilla", np.zeros((3, 2)), np.zeros((2, 2)), np.zeros(2))
    h, _ = cell_forward("vanilla", np.array([5.0, -1.0, 2.0]), np.array([0.4, -0.9]), p)
    assert h.tolist() == [0.0, 0.0]


def test_vanilla_bias_derivative_is_one():
    p = RnnCellParams("vanilla", np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1))
    state, cache = cell_forward("vanilla", np.zeros(1), None, p)
    _, _, grads = cell_backward(cache, np.ones(1))
    assert state.tolist() == [0.0]
    assert grads["b"].tolist() == [1.0]


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("seed", range(10))
def test_cell_matches_scalar_oracle(variant, seed):
    rng = np.random.default_rng(seed)
    p = random_cell(variant, 3, 4, rng)
    x, h, c = rng.normal(size=3), rng.normal(size=4) * 0.5, rng.normal(size=4)
    state = (h, c) if variant == "lstm" else h
    new, _ = cell_forward(variant, x, state, p)
    ref_h, ref_c = ref_cell(variant, x, h, c, p)
    got_h = new[0] if variant == "lstm" else new
    np.testing.assert_allclose(got_h, ref_h, rtol=0, atol=1e-12)
    if variant == "lstm":
        np.testing.assert_allclose(new[1], ref_c, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_cell_backward_zero_grad(variant):
    rng = np.random.default_rng(1)
    p = random_cell(variant, 3, 2, rng)
    state, cache = cell_forward(variant, rng.normal(size=3), None, p)
    zero = (np.zeros(2), np.zeros(2)) if variant == "lstm" else np.zeros(2)
    gx, gprev, grads = cell_backward(cache, zero)
    assert not gx.any()
    for g in (gprev if variant == "lstm" else (gprev,)):
        assert not g.any()
    assert all(not g.any() for g in grads.values())


def test_cell_shape_errors():
    p = init_cell("gru", 3, 2, seed=0)
    with pytest.raises(ShapeError):
        cell_forward("gru", np.zeros(4), None, p)
    with pytest.raises(ShapeError):
        cell_forward("gru", np.zeros(3), np.zeros(5), p)
    with pytest.raises(ConfigError):
        cell_forward("elman", np.zeros(3), None, p)


def test_lstm_forget_bias_starts_at_one():
    p = init_cell("lstm", 3, 4, seed=0)
    assert p.b[4:8].tolist() == [1.0] * 4
    assert not p.b[:4].any() and not p.b[8:].any()


# -- bidirectional layer and stack -------------------------------------------------


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("seed", range(5))
def test_birnn_matches_scalar_oracle(variant, seed):
    rng = np.random.default_rng(seed)
    layer = random_layer(variant, 3, 4, rng)
    seq = rng.normal(size=(8, 3))
    out, _ = birnn_forward(seq, layer)
    np.testing.assert_allclose(out, ref_birnn(seq, layer), rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_birnn_single_step(variant):
    rng = np.random.default_rng(3)
    layer = random_layer(variant, 2, 3, rng)
    x = rng.normal(size=(1, 2))
    out, _ = birnn_forward(x, layer)
    f, _ = cell_forward(variant, x[0], None, layer.forward_cell)
    b, _ = cell_forward(variant, x[0], None, layer.backward_cell)
    if variant == "lstm":
        f, b = f[0], b[0]
    np.testing.assert_allclose(out[0], f + b, rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(VARIANTS))
def test_birnn_reversal_symmetry(seed, variant):
    rng = np.random.default_rng(seed)
    layer = random_layer(variant, 3, 4, rng)
    swapped = BiRnnLayerParams(layer.backward_cell, layer.forward_cell)
    seq = rng.normal(size=(int(rng.integers(1, 12)), 3))
    out, _ = birnn_forward(seq, layer)
    rev, _ = birnn_forward(seq[::-1].copy(), swapped)
    np.testing.assert_allclose(rev, out[::-1], rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gru_outputs_bounded_by_one(seed):
    rng = np.random.default_rng(seed)
    layers = [random_layer("gru", 3, 5, rng), random_layer("gru", 5, 4, rng)]
    for L in layers:
        for cell in (L.forward_cell, L.backward_cell):
            cell.Wx *= 4
            cell.Wh *= 4
    seq = rng.normal(0, 5, size=(20, 3))
    fwd = ref_scan("gru", seq, layers[0].forward_cell)
    assert np.abs(fwd).max() <= 1.0
    out, _ = stack_forward(seq, layers)
    assert np.abs(out).max() <= 2.0  # two directions summed


def test_default_stack_widths():
    cfg = RnnStackConfig()
    assert cfg.layer_hidden_sizes == (256, 128, 64, 64, 128, 256)
    layers = init_stack(cfg, 64, seed=0)
    assert [l.forward_cell.hidden_size for l in layers] == [256, 128, 64, 64, 128, 256]
    assert [l.forward_cell.input_size for l in layers] == [64, 256, 128, 64, 64, 128]
    out, _ = stack_forward(np.random.default_rng(0).normal(size=(7, 64)), layers)
    assert out.shape == (7, 256)


def test_stack_config_validation():
    with pytest.raises(ConfigError):
        RnnStackConfig(())
    with pytest.raises(ConfigError):
        RnnStackConfig((4,), direction_merge="concat")
    with pytest.raises(ShapeError):
        BiRnnLayerParams(init_cell("gru", 3, 2, 0), init_cell("gru", 3, 4, 1))


def test_one_layer_stack_is_birnn():
    rng = np.random.default_rng(0)
    layer = random_layer("lstm", 3, 4, rng)
    seq = rng.normal(size=(6, 3))
    assert np.array_equal(stack_forward(seq, [layer])[0], birnn_forward(seq, layer)[0])


def test_stack_input_errors():
    layers = init_stack(RnnStackConfig((4, 3)), 5, seed=0)
    with pytest.raises(ShapeError):
        stack_forward(np.zeros((0, 5)), layers)
    with pytest.raises(ShapeError):
        stack_forward(np.zeros((3, 4)), layers)


@pytest.mark.parametrize("variant", VARIANTS)
def test_stack_backward_zero_grad(variant):
    layers = init_stack(RnnStackConfig((4, 3), variant), 2, seed=0)
    out, cache = stack_forward(np.random.default_rng(0).normal(size=(5, 2)), layers)
    d_seq, grads = stack_backward(cache, np.zeros_like(out))
    assert not d_seq.any()
    for g in grads:
        for direction in g.values():
            assert all(not v.any() for v in direction.values())


@pytest.mark.parametrize("variant", VARIANTS)
def test_first_slice_reaches_last_slice(variant):
    rng = np.random.default_rng(7)
    layers = [random_layer(variant, 3, 4, rng), random_layer(variant, 4, 4, rng)]
    seq = rng.normal(size=(10, 3))
    out, cache = stack_forward(seq, layers)
    R = np.zeros_like(out)
    R[-1] = 1.0
    d_seq, _ = stack_backward(cache, R)
    assert np.abs(d_seq[0]).max() > 1e-8
    # perturbation probe agrees
    bumped = seq.copy()
    bumped[0] += 1e-3
    assert not np.allclose(stack_forward(bumped, layers)[0][-1], out[-1], rtol=0, atol=1e-12)
