"""Probabilistic layer: moment formulas, code-path agreement, file schema."""

import numpy as np
import pytest

from uqseg import (
    DomainError,
    GaussianHead,
    ShapeError,
    load_head,
    point_logits,
    predict_moments,
    save_head,
)
from uqseg.oracle import mc_logit_moments


def _head(mean_w, bias, var_w, var_b, noise=0.0):
    return GaussianHead(mean_w, bias, var_w, var_b, noise)


def test_identity_feature_example():
    head = _head([[2.0]], [0.0], [[0.25]], [0.0])
    lm = predict_moments(np.array([[[1.0]]]), head)
    assert lm.mean[0, 0, 0] == 2.0
    assert lm.var[0, 0, 0] == 0.25


def test_variance_scales_with_feature_square():
    head = _head([[2.0]], [0.0], [[0.25]], [0.0])
    lm = predict_moments(np.array([[[2.0]]]), head)
    assert lm.mean[0, 0, 0] == 4.0
    assert lm.var[0, 0, 0] == 1.0


def test_point_logits_is_exactly_the_mean_field():
    rng = np.random.default_rng(3)
    head = _head(
        rng.normal(size=(5, 9)), rng.normal(size=5),
        rng.uniform(0, 1, (5, 9)), rng.uniform(0, 1, 5), 0.3,
    )
    for dtype in (np.float32, np.float64):
        design = rng.normal(size=(6, 7, 9)).astype(dtype)
        assert np.array_equal(point_logits(design, head), predict_moments(design, head).mean)


def test_zero_features_give_bias():
    head = _head(np.ones((3, 4)), [0.5, -1.0, 2.0], np.zeros((3, 4)), np.zeros(3))
    logits = point_logits(np.zeros((2, 2, 4)), head)
    assert np.allclose(logits, [0.5, -1.0, 2.0])


def test_zero_variance_head_collapses_to_point_estimate():
    rng = np.random.default_rng(11)
    head = _head(rng.normal(size=(4, 6)), rng.normal(size=4), np.zeros((4, 6)), np.zeros(4))
    design = rng.normal(size=(5, 5, 6)).astype(np.float32)
    lm = predict_moments(design, head)
    assert (lm.var == 0.0).all()
    assert np.array_equal(lm.mean, point_logits(design, head))


def test_variance_never_below_noise():
    rng = np.random.default_rng(5)
    head = _head(
        rng.normal(size=(6, 8)), rng.normal(size=6),
        rng.uniform(0, 0.5, (6, 8)), rng.uniform(0, 0.5, 6), 0.125,
    )
    design = rng.normal(size=(9, 4, 8)).astype(np.float32)
    lm = predict_moments(design, head)
    assert (lm.var >= np.float32(0.125)).all()


def test_mean_linear_in_weights_var_linear_in_variances():
    rng = np.random.default_rng(17)
    k, d = 3, 7
    w1, w2 = rng.normal(size=(k, d)), rng.normal(size=(k, d))
    v1, v2 = rng.uniform(0, 1, (k, d)), rng.uniform(0, 1, (k, d))
    zeros_b = np.zeros(k)
    design = rng.normal(size=(4, 4, d))
    m_sum = predict_moments(design, _head(w1 + w2, zeros_b, v1 + v2, zeros_b))
    m1 = predict_moments(design, _head(w1, zeros_b, v1, zeros_b))
    m2 = predict_moments(design, _head(w2, zeros_b, v2, zeros_b))
    np.testing.assert_allclose(m_sum.mean, m1.mean + m2.mean, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(m_sum.var, m1.var + m2.var, rtol=1e-5, atol=1e-6)


def test_grid_path_matches_per_pixel_inner_product():
    # convolution-style whole-grid evaluation vs an explicit per-pixel loop
    rng = np.random.default_rng(23)
    k, d = 5, 16
    head = _head(
        rng.normal(size=(k, d)), rng.normal(size=k),
        rng.uniform(0, 1, (k, d)), rng.uniform(0, 1, k), 0.1,
    )
    design = rng.normal(size=(6, 5, d)).astype(np.float32)
    lm = predict_moments(design, head)
    scale = max(1.0, float(np.abs(lm.mean).max()))
    for i in range(design.shape[0]):
        for j in range(design.shape[1]):
            x = design[i, j].astype(np.float64)
            for c in range(k):
                ref_mean = float(np.dot(x, head.mean_weight[c])) + head.mean_bias[c]
                ref_var = 0.1 + float(np.dot(x * x, head.var_weight[c])) + head.var_bias[c]
                assert abs(lm.mean[i, j, c] - ref_mean) <= 1e-6 * scale
                assert abs(lm.var[i, j, c] - ref_var) <= 1e-6 * max(1.0, ref_var)


def test_shape_and_domain_errors():
    head = _head(np.ones((2, 3)), np.zeros(2), np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeError):
        predict_moments(np.zeros((4, 4, 5)), head)
    with pytest.raises(DomainError):
        predict_moments(np.array([[[1.0, np.nan, 0.0]]]), head)
    with pytest.raises(DomainError):
        GaussianHead(np.ones((2, 3)), np.zeros(2), -np.ones((2, 3)), np.zeros(2))
    with pytest.raises(DomainError):
        GaussianHead(np.ones((2, 3)), np.zeros(2), np.zeros((2, 3)), np.zeros(2), -1.0)
    with pytest.raises(ShapeError):
        GaussianHead(np.ones((2, 3)), np.zeros(5), np.zeros((2, 3)), np.zeros(2))


def test_head_file_round_trip(tmp_path):
    rng = np.random.default_rng(31)
    head = GaussianHead(
        rng.normal(size=(4, 6)).astype(np.float32),
        rng.normal(size=4).astype(np.float32),
        rng.uniform(0, 1, (4, 6)).astype(np.float32),
        rng.uniform(0, 1, 4).astype(np.float32),
        0.25,
    )
    path = tmp_path / "head.eusg"
    save_head(path, head)
    back = load_head(path)
    assert np.array_equal(back.mean_weight, head.mean_weight)
    assert np.array_equal(back.var_weight, head.var_weight)
    assert np.array_equal(back.mean_bias, head.mean_bias)
    assert np.array_equal(back.var_bias, head.var_bias)
    assert back.noise == np.float32(0.25)


def test_missing_head_entries_detected(tmp_path):
    from uqseg import Tensor, TensorContainer, write_container

    path = tmp_path / "bad_head.eusg"
    write_container(path, TensorContainer([Tensor("mean_weight", np.ones((2, 2), np.float32))]))
    with pytest.raises(ShapeError, match="missing"):
        load_head(path)


def test_moments_match_monte_carlo_sampling():
    # random D=8, K=5 head vs the weight-sampling oracle at a million draws
    rng = np.random.default_rng(99)
    head = GaussianHead(
        rng.normal(size=(5, 8), scale=0.6),
        rng.normal(size=5, scale=0.3),
        rng.uniform(0.01, 0.4, size=(5, 8)),
        rng.uniform(0.01, 0.3, size=5),
        0.05,
    )
    x = rng.normal(size=8)
    est = mc_logit_moments(x, head, 10**6, seed=777)
    lm = predict_moments(x[None, None, :], head)
    assert (np.abs(lm.mean[0, 0] - est.mean) <= 4.0 * est.se_mean).all()
    assert (np.abs(lm.var[0, 0] - est.variance) <= 4.0 * est.se_variance).all()
