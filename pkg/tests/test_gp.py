import math

import numpy as np
import pytest

from vbagp import gp
from vbagp.core import RandomStream


def test_se_kernel_values():
    k = gp.Kernel("squared_exponential", [1.0], 1.0)
    assert k([0.0], [0.0]) == 1.0
    assert k([0.0], [1.0]) == pytest.approx(math.exp(-1.0), abs=1e-6)
    assert gp.Kernel("squared_exponential", [1.0], 2.5)([0.3], [0.3]) == 2.5


def test_matern52_kernel_value():
    s5 = math.sqrt(5.0)
    expected = (1 + s5 + 5 / 3) * math.exp(-s5)
    k = gp.Kernel("matern52", [1.0], 1.0)
    assert k([0.0], [1.0]) == pytest.approx(expected, abs=1e-12)
    assert k([0.0], [1.0]) == pytest.approx(0.523994, abs=1e-6)


def test_kernel_is_anisotropic_and_stationary():
    k = gp.Kernel("matern52", [1.0, 4.0], 1.0)
    assert k([0, 0], [1, 0]) < k([0, 0], [0, 1])
    assert k([1, 2], [2, 3]) == pytest.approx(k([0, 0], [1, 1]))
    se = gp.Kernel("squared_exponential", [1.0, 2.0], 1.0)
    # product form across dimensions
    assert se([0, 0], [1, 1]) == pytest.approx(se([0, 0], [1, 0]) * se([0, 0], [0, 1]))


def test_kernel_errors():
    with pytest.raises(ValueError):
        gp.Kernel("matern52", [1.0], 1.0)([0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        gp.Kernel("rbf", [1.0], 1.0)
    with pytest.raises(ValueError):
        gp.Kernel("matern52", [0.0], 1.0)


def test_blocked_correlation_matches_dense():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(700, 3)), rng.normal(size=(200, 3))
    ls = np.array([0.7, 1.3, 2.0])
    for kind in gp.KERNEL_KINDS:
        d = np.sqrt((((A[:, None, :] - B[None, :, :]) / ls) ** 2).sum(-1))
        ref = np.exp(-d ** 2) if kind == "squared_exponential" else \
            (1 + math.sqrt(5) * d + 5 * d ** 2 / 3) * np.exp(-math.sqrt(5) * d)
        np.testing.assert_allclose(gp.correlation(kind, ls, A, B), ref, atol=1e-12)


def test_interpolation_at_design_points(sine_model, branch_model):
    for m in (sine_model, branch_model):
        mean, sd = m.predict(m.x_doe)
        assert np.max(np.abs(mean - m.y)) <= 1e-6 * np.ptp(m.y)
        assert np.all(sd ** 2 <= max(10 * m.jitter, 1e-10 * m.kernel.variance))


def test_far_prediction_reverts_to_trend(sine_model):
    mean, sd = sine_model.predict(np.array([[1e4]]))
    assert mean[0] == pytest.approx(sine_model.beta)
    assert sd[0] ** 2 >= sine_model.kernel.variance


def test_batch_equals_pointwise(branch_model):
    X = np.random.default_rng(1).normal(size=(25, 2))
    mb, sb = branch_model.predict(X)
    for i, x in enumerate(X):
        m, s = branch_model.predict(x)
        assert m[0] == pytest.approx(mb[i], abs=1e-12) and s[0] == pytest.approx(sb[i], abs=1e-10)
    mc, sc = branch_model.predict(X, chunk=7)
    np.testing.assert_allclose(mc, mb, atol=1e-12)
    np.testing.assert_allclose(sc, sb, atol=1e-10)


def test_prediction_matches_posterior_covariance(branch_model):
    X = np.random.default_rng(2).normal(size=(10, 2))
    _, sd = branch_model.predict(X)
    np.testing.assert_allclose(np.sqrt(np.maximum(np.diag(branch_model.posterior_cov(X)), 0)), sd, atol=1e-8)


def test_mean_invariant_to_row_permutation(branch_model):
    perm = np.random.default_rng(3).permutation(branch_model.n)
    other = gp.GpModel(branch_model.kernel, branch_model.x_doe[perm], branch_model.y[perm],
                       branch_model.x_mean, branch_model.x_scale, branch_model.jitter)
    X = np.random.default_rng(4).normal(size=(50, 2))
    np.testing.assert_allclose(other.predict(X)[0], branch_model.predict(X)[0], atol=1e-9)


def test_constant_outputs():
    X = np.linspace(0, 1, 6)[:, None]
    m = gp.fit(X, np.full(6, 2.5), "matern52", RandomStream(0))
    mean, sd = m.predict(np.linspace(-1, 2, 31)[:, None])
    np.testing.assert_allclose(mean, 2.5, atol=1e-9)
    assert np.all(m.predict(X)[1] < 1e-5)


def test_fit_is_deterministic():
    X = np.random.default_rng(5).uniform(-2, 2, (12, 2))
    y = X[:, 0] ** 2 - X[:, 1]
    a = gp.fit(X, y, "matern52", RandomStream(9))
    b = gp.fit(X, y, "matern52", RandomStream(9))
    assert np.array_equal(a.kernel.length_scales, b.kernel.length_scales)
    assert a.kernel.variance == b.kernel.variance


def test_hyperparameter_recovery_from_known_process():
    # draws from a GP with l=0.5, variance 2 on a well-conditioned 60-point grid
    x = np.linspace(0, 15, 60)[:, None]
    truth = gp.Kernel("squared_exponential", [0.5], 2.0)
    L = np.linalg.cholesky(truth.matrix(x, x) + 1e-10 * np.eye(60))
    ok = 0
    trials = 40
    for t in range(trials):
        y = L @ np.random.default_rng(100 + t).standard_normal(60)
        m = gp.fit(x, y, "squared_exponential", RandomStream(t))
        ls = m.kernel.length_scales[0] * m.x_scale[0]
        ok += 0.25 <= ls <= 1.0 and 1.0 <= m.kernel.variance <= 4.0
    assert ok >= 0.8 * trials


def test_enrich_interpolates_and_rejects_duplicates(sine_model):
    x = np.array([0.37])
    m2 = sine_model.enrich(x, 1.234, RandomStream(1))
    mean, sd = m2.predict(x)
    assert mean[0] == pytest.approx(1.234, abs=1e-6) and sd[0] < 1e-4
    assert m2.n == sine_model.n + 1
    with pytest.raises(gp.DuplicateDesignError):
        m2.enrich(x, 0.0, RandomStream(1))


def test_variance_never_increases_with_frozen_hyperparameters(sine_model):
    test = np.linspace(-4, 4, 41)[:, None]
    X2 = np.vstack([sine_model.x_doe, [[0.5]]])
    m2 = sine_model.with_hyperparameters_of(X2, np.append(sine_model.y, 0.0))
    assert np.all(m2.predict(test)[1] <= sine_model.predict(test)[1] + 1e-12)


def test_duplicate_design_rejected():
    with pytest.raises(gp.DuplicateDesignError):
        gp.fit(np.array([[0.0], [1.0], [1.0]]), np.array([0.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        gp.fit(np.array([[0.0]]), np.array([1.0]))


def test_round_trip(branch_model):
    m = gp.GpModel.from_dict(branch_model.to_dict())
    X = np.random.default_rng(6).normal(size=(5, 2))
    np.testing.assert_array_equal(m.predict(X)[0], branch_model.predict(X)[0])


def test_kriging_weights_reproduce_mean(branch_model):
    X = np.random.default_rng(7).normal(size=(30, 2))
    np.testing.assert_allclose(branch_model.mean_from_outputs(X, branch_model.y), branch_model.predict(X)[0],
                               atol=1e-8)
