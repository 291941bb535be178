import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpddf.kernel import (Dataset, Hyperparams, NumericError, PredictiveDistribution,
                          cholesky_jitter, cov_matrix, full_gp_predict, full_gp_predict_many,
                          se_cov, support_cov)

from helpers import random_hyper, textbook_gp


H = Hyperparams(1.0, 0.01, (1.0, 1.0))


def test_se_cov_same_observation_adds_noise():
    assert se_cov([0.3, 0.4], [0.3, 0.4], H, include_noise=True) == pytest.approx(1.01)


def test_se_cov_unit_distance():
    assert se_cov([0, 0], [math.sqrt(2), 0], H) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_se_cov_anisotropic_hand_value():
    h = Hyperparams(2.0, 0.0, (3.0, 4.0))
    assert se_cov([0, 0], [3, 4], h) == pytest.approx(2 * math.exp(-1.0), rel=1e-12)


def test_se_cov_coordinate_equality_alone_adds_no_noise():
    assert se_cov([1, 1], [1, 1], H) == pytest.approx(1.0)


def test_se_cov_dimension_mismatch():
    with pytest.raises(ValueError):
        se_cov([0, 0, 0], [0, 0, 0], H)


def test_cov_matrix_single_point_diagonal():
    np.testing.assert_allclose(cov_matrix([[2.0, 3.0]], [[2.0, 3.0]], H, "diagonal"), [[1.01]])


def test_cov_matrix_cross_block_has_no_noise():
    a = np.array([[0.0, 0.0]])
    B = np.array([[0.0, 0.0], [1.0, 2.0]])
    K = cov_matrix(a, B, H)
    assert K.shape == (1, 2)
    np.testing.assert_allclose(K, [[se_cov(a[0], B[0], H), se_cov(a[0], B[1], H)]])
    assert K[0, 0] == pytest.approx(1.0)


def test_cov_matrix_diagonal_requires_same_list():
    with pytest.raises(ValueError):
        cov_matrix([[0, 0]], [[1, 1]], H, "diagonal")


def test_cov_matrix_random_points_spd():
    rng = np.random.default_rng(3)
    A = rng.uniform(0, 5, (5, 2))
    K = cov_matrix(A, A, H, "diagonal")
    np.testing.assert_allclose(K, K.T)
    np.linalg.cholesky(K)


def test_full_gp_interpolates_noise_free_point():
    h = Hyperparams(1.0, 0.0, (1.0, 1.0), prior_mean=0.5)
    p = full_gp_predict([1.0, 2.0], Dataset([[1.0, 2.0]], [1.5]), h)
    assert p.mean == pytest.approx(1.5)
    assert p.variance == pytest.approx(0.0, abs=1e-12)


def test_full_gp_far_data_recovers_prior():
    h = Hyperparams(1.0, 0.01, (1.0, 1.0), prior_mean=-2.0)
    p = full_gp_predict([0.0, 0.0], Dataset([[100.0, 100.0]], [5.0]), h)
    assert p.mean == pytest.approx(-2.0)
    assert p.variance == pytest.approx(h.prior_var)


def test_full_gp_empty_data_rejected():
    with pytest.raises(ValueError):
        full_gp_predict([0, 0], Dataset.empty(2), H)


def test_full_gp_matches_textbook_oracle():
    rng = np.random.default_rng(11)
    h = Hyperparams(1.3, 0.05, (6.0, 9.0), prior_mean=0.4)
    D = rng.uniform(0, 50, (10, 2))
    y = rng.normal(size=10)
    g = np.stack(np.meshgrid(np.linspace(0, 50, 6), np.linspace(0, 50, 6)), -1).reshape(-1, 2)
    mu, var = full_gp_predict_many(g, Dataset(D, y), h)
    mu0, var0 = textbook_gp(g, D, y, h)
    np.testing.assert_allclose(mu, mu0, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(var, var0, rtol=1e-10)


def test_adding_data_never_increases_variance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        h = random_hyper(rng)
        D = rng.uniform(0, 50, (20, 2))
        y = rng.normal(size=20)
        X = rng.uniform(0, 50, (10, 2))
        _, v_small = full_gp_predict_many(X, Dataset(D[:8], y[:8]), h)
        _, v_big = full_gp_predict_many(X, Dataset(D, y), h)
        assert np.all(v_big <= v_small + 1e-10)
        assert np.all(v_small <= h.prior_var + 1e-12)


coord = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.tuples(coord, coord), st.tuples(coord, coord),
       st.floats(0.1, 5.0), st.floats(0.0, 1.0), st.floats(0.2, 10.0))
def test_se_cov_symmetric_and_bounded(x, x2, sv, nv, ell):
    h = Hyperparams(sv, nv, (ell, 2 * ell))
    a = se_cov(x, x2, h)
    assert a == se_cov(x2, x, h)
    assert 0 <= a <= sv + nv


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(0.0, 0.1, (1.0,))
    with pytest.raises(ValueError):
        Hyperparams(1.0, -0.1, (1.0,))
    with pytest.raises(ValueError):
        Hyperparams(1.0, 0.1, (1.0, -2.0))
    h = Hyperparams(2, 0.5, [3, 4])
    assert h.dim == 2 and h.prior_var == 2.5
    assert h.replace(noise_var=0.0).noise_var == 0.0


def test_dataset_rejects_nan_and_length_mismatch():
    with pytest.raises(ValueError):
        Dataset([[0.0, 0.0]], [np.nan])
    with pytest.raises(ValueError):
        Dataset([[0.0, 0.0], [1.0, 1.0]], [1.0])
    d = Dataset.empty(3)
    assert len(d) == 0 and d.dim == 3


def test_predictive_distribution_clamps_tiny_negative_variance():
    assert PredictiveDistribution(0.0, -5e-10).variance == 0.0
    with pytest.raises(ValueError):
        PredictiveDistribution(0.0, -1e-6)


def test_cholesky_jitter_reports_condition_number():
    with pytest.raises(NumericError, match="condition number"):
        cholesky_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]), 0.0)


def test_support_cov_jitter_is_relative_to_signal_variance():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    h = Hyperparams(4.0, 0.1, (1.0, 1.0))
    K, L = support_cov(pts, h)
    np.testing.assert_allclose(K - cov_matrix(pts, pts, h), 1e-12 * 4.0 * np.eye(2), rtol=1e-3, atol=1e-15)
    np.testing.assert_allclose(L @ L.T, K)
