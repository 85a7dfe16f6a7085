import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsnet.errors import ConfigError, ShapeError, ValidationError
from rsnet.model import (
    AXIS_NAMES,
    RSNetConfig,
    build_rsnet,
    forward_batch,
    median_freq_weights,
    rsnet_backward,
    rsnet_forward,
    softmax_cross_entropy,
)
from rsnet.nncore import linear_pointwise_forward, relu
from rsnet.rnn import BiRnnLayerParams, RnnCellParams, RnnStackConfig, stack_forward
from rsnet.slicing import assign_slices, slice_pool_forward, slice_unpool_forward


def toy_config(variant="gru", **kw):
    base = dict(
        num_classes=4,
        d_in=3,
        input_channels=(6, 5),
        output_channels=(7,),
        rnn=RnnStackConfig((4, 3), variant),
        resolutions=(0.1, 0.15, 0.08),
    )
    base.update(kw)
    return RSNetConfig(**base)


def toy_cube(seed, n=40):
    rng = np.random.default_rng(seed)
    coords = rng.random((n, 3))
    return rng.normal(size=(n, 3)), coords


def jittered(cfg, seed):
    # nonzero biases so every path carries signal
    params = build_rsnet(cfg, seed, np.float64)
    rng = np.random.default_rng(seed + 99)
    return {k: v + rng.normal(0, 0.1, v.shape) for k, v in params.items()}


# -- construction --------------------------------------------------------------


def test_default_shape_audit():
    cfg = RSNetConfig(num_classes=13, d_in=9)
    assert cfg.d_su == 768
    p = build_rsnet(cfg, 0)
    assert [p[f"in.{i}.W"].shape for i in range(3)] == [(9, 64), (64, 64), (64, 64)]
    assert [p[f"out.{i}.W"].shape for i in range(3)] == [(768, 512), (512, 256), (256, 13)]
    for ax in AXIS_NAMES:
        widths = [p[f"rnn.{ax}.{l}.fwd.Wh"].shape[0] for l in range(6)]
        assert widths == [256, 128, 64, 64, 128, 256]
        assert p[f"rnn.{ax}.0.bwd.Wx"].shape == (64, 3 * 256)


def test_build_is_deterministic():
    cfg = toy_config()
    a, b, c = build_rsnet(cfg, 3), build_rsnet(cfg, 3), build_rsnet(cfg, 4)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a if k.endswith("W"))


def test_config_validation():
    with pytest.raises(ConfigError):
        toy_config(num_classes=1)
    with pytest.raises(ConfigError):
        toy_config(resolutions=(0.1, 0.0, 0.1))
    with pytest.raises(ConfigError):
        toy_config(branch_merge="sum")


def test_ablated_model_has_no_rnn_params():
    cfg = toy_config(ablate_rnn=True)
    p = build_rsnet(cfg, 0)
    assert not any(k.startswith("rnn.") for k in p)
    assert p["out.0.W"].shape == (3 * 5, 7)


# -- forward ----------------------------------------------------------------------


def test_single_point_cube():
    cfg = toy_config()
    logits, _ = rsnet_forward(np.ones((1, 3)), np.zeros((1, 3)), build_rsnet(cfg, 0, np.float64), cfg)
    assert logits.shape == (1, 4)
    assert np.isfinite(logits).all()


def test_forward_shape_errors():
    cfg = toy_config()
    p = build_rsnet(cfg, 0)
    with pytest.raises(ShapeError):
        rsnet_forward(np.ones((5, 4)), np.zeros((5, 3)), p, cfg)
    with pytest.raises(ShapeError):
        rsnet_forward(np.ones((5, 3)), np.zeros((4, 3)), p, cfg)


def composed(features, coords, params, cfg):
    """Straight-line reference built from the per-module ops."""
    X = features
    for i in range(len(cfg.input_channels)):
        X = relu(linear_pointwise_forward(X, params[f"in.{i}.W"], params[f"in.{i}.b"]))
    branches = []
    for a, ax in enumerate(AXIS_NAMES):
        assign = assign_slices(coords, ax, cfg.resolutions[a])
        seq, _ = slice_pool_forward(X, assign)
        if not cfg.ablate_rnn:
            layers = []
            for l in range(len(cfg.rnn.layer_hidden_sizes)):
                cells = [
                    RnnCellParams(cfg.rnn.variant, *(params[f"rnn.{ax}.{l}.{d}.{k}"] for k in ("Wx", "Wh", "b")))
                    for d in ("fwd", "bwd")
                ]
                layers.append(BiRnnLayerParams(*cells))
            seq, _ = stack_forward(seq, layers)
        branches.append(slice_unpool_forward(seq, assign))
    X = np.concatenate(branches, axis=1)
    n_out = len(cfg.output_channels) + 1
    for i in range(n_out):
        X = linear_pointwise_forward(X, params[f"out.{i}.W"], params[f"out.{i}.b"])
        if i < n_out - 1:
            X = relu(X)
    return X


@pytest.mark.parametrize("variant", ["vanilla", "gru", "lstm"])
@pytest.mark.parametrize("seed", range(3))
def test_forward_matches_composition_oracle(variant, seed):
    cfg = toy_config(variant)
    params = jittered(cfg, seed)
    F, C = toy_cube(seed)
    logits, _ = rsnet_forward(F, C, params, cfg)
    np.testing.assert_allclose(logits, composed(F, C, params, cfg), rtol=0, atol=1e-12)


def test_ablated_forward_matches_composition_oracle():
    cfg = toy_config(ablate_rnn=True)
    params = jittered(cfg, 0)
    F, C = toy_cube(0)
    np.testing.assert_allclose(rsnet_forward(F, C, params, cfg)[0], composed(F, C, params, cfg), rtol=0, atol=1e-12)


def test_batch_equals_separate_cubes():
    cfg = toy_config("lstm")
    params = jittered(cfg, 1)
    cubes = [toy_cube(s, n) for s, n in ((0, 30), (1, 11), (2, 1))]
    logits, _ = forward_batch(params, cfg, [c[0] for c in cubes], [c[1] for c in cubes])
    separate = np.concatenate([rsnet_forward(f, c, params, cfg)[0] for f, c in cubes])
    np.testing.assert_allclose(logits, separate, rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_equivariance(seed):
    cfg = toy_config()
    params = jittered(cfg, 0)
    F, C = toy_cube(seed % 1000)
    perm = np.random.default_rng(seed).permutation(len(F))
    out, _ = rsnet_forward(F, C, params, cfg)
    out_p, _ = rsnet_forward(F[perm], C[perm], params, cfg)
    np.testing.assert_allclose(out_p, out[perm], rtol=0, atol=1e-9)


@pytest.mark.parametrize("axis", range(3))
@pytest.mark.parametrize("k", [1, 3, 17])
def test_translation_by_multiples_of_r(axis, k):
    cfg = toy_config(resolutions=(0.125, 0.25, 0.0625))  # exact in binary
    params = jittered(cfg, 2)
    F, C = toy_cube(5)
    shifted = C.copy()
    shifted[:, axis] += k * cfg.resolutions[axis]
    assert np.array_equal(rsnet_forward(F, C, params, cfg)[0], rsnet_forward(F, shifted, params, cfg)[0])


def test_other_slices_feel_a_perturbation():
    cfg = toy_config()
    params = jittered(cfg, 0)
    F, C = toy_cube(0)
    k = assign_slices(C, "z", cfg.resolutions[2]).slice_of_point
    target = k == k.max()
    out, _ = rsnet_forward(F, C, params, cfg)
    bumped = F.copy()
    bumped[target] += 0.5
    moved = np.abs(rsnet_forward(bumped, C, params, cfg)[0] - out).max(axis=1)
    assert (moved[~target] > 0).any()


# -- backward -------------------------------------------------------------------


def test_zero_grad_logits_give_zero_grads():
    cfg = toy_config()
    params = jittered(cfg, 0)
    F, C = toy_cube(0)
    logits, cache = rsnet_forward(F, C, params, cfg)
    grads = rsnet_backward(cache, np.zeros_like(logits))
    assert set(grads) == set(params) | {"features"}
    assert all(not g.any() for g in grads.values())


def test_disabled_branches_get_no_gradient():
    cfg = toy_config()
    params = jittered(cfg, 0)
    w = cfg.branch_width
    params["out.0.W"][w:] = 0.0  # only the x branch feeds the output block
    F, C = toy_cube(0)
    logits, cache = rsnet_forward(F, C, params, cfg)
    grads = rsnet_backward(cache, np.random.default_rng(0).normal(size=logits.shape))
    for k, g in grads.items():
        if k.startswith(("rnn.y.", "rnn.z.")):
            assert not g.any(), k
        elif k.startswith("rnn.x.") and k.endswith("Wx"):
            assert g.any(), k


# -- losses --------------------------------------------------------------------


def test_cross_entropy_uniform_logits():
    loss, grad = softmax_cross_entropy(np.zeros((5, 4)), np.array([0, 1, 2, 3, 1]))
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


def test_cross_entropy_confident_and_stable():
    logits = np.array([[1000.0, 0.0, 0.0], [0.0, -1000.0, 500.0]])
    loss, grad = softmax_cross_entropy(logits, np.array([0, 2]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(grad).all()


@pytest.mark.parametrize("c", [0.3, 1.0, 7.5])
def test_equal_weights_match_unweighted(c):
    rng = np.random.default_rng(0)
    logits, labels = rng.normal(size=(10, 3)), rng.integers(0, 3, 10)
    a = softmax_cross_entropy(logits, labels)
    b = softmax_cross_entropy(logits, labels, np.full(3, c))
    assert a[0] == pytest.approx(b[0], abs=1e-14)
    np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-15)


def test_weighted_loss_formula():
    rng = np.random.default_rng(1)
    logits, labels, w = rng.normal(size=(8, 3)), rng.integers(0, 3, 8), np.array([0.5, 2.0, 1.0])
    loss, _ = softmax_cross_entropy(logits, labels, w)
    nll = [-(logits[i, labels[i]] - math.log(np.exp(logits[i]).sum())) for i in range(8)]
    wi = w[labels]
    assert loss == pytest.approx(float((wi * nll).sum() / wi.sum()), abs=1e-13)


def test_cross_entropy_label_errors():
    with pytest.raises(ValidationError):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ShapeError):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0]))


def test_median_freq_examples():
    np.testing.assert_allclose(median_freq_weights([2, 1, 1]), [0.5, 1.0, 1.0])
    np.testing.assert_allclose(median_freq_weights([5, 5, 5, 5]), [1, 1, 1, 1])
    w = median_freq_weights([3, 0, 1])
    assert w[1] == 0.0 and w[0] > 0


def test_median_freq_skewed_portions():
    # the weight ratio of two classes depends only on their two portions
    portions = [25.3, 20.0, 12.0, 6.5, 3.0, 0.5, 32.7]
    w = median_freq_weights(portions)
    assert w[5] / w[0] == pytest.approx(50.6, rel=1e-12)


def test_median_freq_errors():
    with pytest.raises(ValidationError):
        median_freq_weights([0, 0])
    with pytest.raises(ValidationError):
        median_freq_weights([1, -1])
