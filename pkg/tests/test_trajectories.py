import numpy as np
import pytest
from scipy import stats

from vbagp import gp
from vbagp import trajectories as tr
from vbagp.core import RandomStream


def _unit_model(ls, kind="squared_exponential"):
    return gp.GpModel(gp.Kernel(kind, [ls], 1.0), np.array([[0.2], [0.8]]), np.array([0.0, 1.0]),
                      np.zeros(1), np.ones(1), 0.0)


def test_direct_reproduces_design_outputs(branch_model):
    ens = tr.simulate_direct(branch_model, branch_model.x_doe, 50, RandomStream(0))
    assert ens.values.shape == (50, branch_model.n)
    assert np.max(np.abs(ens.values - branch_model.y)) <= 1e-5 * np.ptp(branch_model.y)


def test_direct_single_point_moments(branch_model):
    x = np.array([[0.4, -1.1]])
    mu, sd = branch_model.predict(x)
    v = tr.simulate_direct(branch_model, x, 2000, RandomStream(1)).values[:, 0]
    assert abs(v.mean() - mu[0]) < 5 * sd[0] / np.sqrt(2000)
    assert abs(v.std(ddof=1) - sd[0]) < 5 * sd[0] / np.sqrt(2 * 1999)


def test_direct_is_deterministic_and_guarded(branch_model):
    pts = np.random.default_rng(2).normal(size=(30, 2))
    a = tr.simulate_direct(branch_model, pts, 10, RandomStream(3)).values
    b = tr.simulate_direct(branch_model, pts, 10, RandomStream(3)).values
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError, match="KL"):
        tr.simulate_direct(branch_model, np.zeros((tr.DIRECT_MAX_POINTS + 1, 2)), 2, RandomStream(3))


def test_kl_truncation_order_tracks_length_scale():
    nodes = np.linspace(0, 1, 200)[:, None]
    short = tr.build_kl(_unit_model(0.01), nodes, 0.99)
    long = tr.build_kl(_unit_model(1.0), nodes, 0.99)
    assert short.truncation_order >= 100
    assert long.truncation_order <= 10


@pytest.mark.parametrize("frac", [0.95, 0.99, 0.999])
def test_kl_captures_requested_fraction(frac):
    b = tr.build_kl(_unit_model(0.1), np.linspace(0, 1, 120)[:, None], frac)
    assert b.captured_fraction >= frac


def test_kl_argument_checks(sine_model):
    with pytest.raises(ValueError):
        tr.build_kl(sine_model, np.zeros((10, 1)), 0.99)
    with pytest.raises(ValueError):
        tr.build_kl(sine_model, np.linspace(-3, 3, 60)[:, None], 0.5)


def _kl_basis(model, points, captured=tr.KL_CAPTURED):
    nodes = tr.kl_domain_nodes(model, points, RandomStream(4))
    return tr.build_kl(model, nodes, captured, extra_nodes=model.x_doe)


def test_kl_reproduces_design_outputs(branch_model):
    basis = _kl_basis(branch_model, np.random.default_rng(5).normal(size=(500, 2)))
    v = tr.simulate_kl(branch_model, basis, branch_model.x_doe, 100, RandomStream(6)).values
    assert np.max(np.abs(v - branch_model.y)) <= 0.02 * np.sqrt(branch_model.kernel.variance)


def test_more_modes_track_kriging_std_better(sine_model):
    # at the design the kriging correction cancels the field exactly, at any truncation;
    # elsewhere the truncated field falls short of the kriging std, less so with more modes
    nodes = np.linspace(-3.5, 3.5, 200)[:, None]
    test = np.linspace(-3.2, 3.2, 101)[:, None]
    sd = sine_model.predict(test)[1]
    errs = []
    for frac in (0.95, 0.99, 0.9999):
        s = tr.TrajectorySampler.kl(sine_model, tr.build_kl(sine_model, nodes, frac), test)
        errs.append(np.max(np.abs(np.sqrt(s.variance) - sd)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01 * np.sqrt(sine_model.kernel.variance)


def test_kl_covariance_equals_direct_at_twenty_points(branch_model):
    pts = np.random.default_rng(7).normal(size=(20, 2)) * 1.5
    kl = tr.TrajectorySampler.kl(branch_model, _kl_basis(branch_model, pts), pts)
    direct = tr.TrajectorySampler.direct(branch_model, pts)
    s2 = branch_model.kernel.variance
    np.testing.assert_allclose(kl.mean, direct.mean, atol=1e-12)
    assert np.max(np.abs(kl.factor @ kl.factor.T - branch_model.posterior_cov(pts))) < 1e-3 * s2


def test_kl_matches_direct_at_twenty_points(branch_model):
    pts = np.random.default_rng(7).normal(size=(20, 2)) * 1.5
    basis = _kl_basis(branch_model, pts)
    n = 5000
    d = tr.simulate_direct(branch_model, pts, n, RandomStream(8)).values
    k = tr.simulate_kl(branch_model, basis, pts, n, RandomStream(9)).values
    # three combined standard errors per column, at a family-wise error rate over the 20 columns
    z = stats.norm.isf(stats.norm.sf(3.0) / 20)
    se_mean = np.sqrt((d.var(0) + k.var(0)) / n)
    assert np.all(np.abs(d.mean(0) - k.mean(0)) <= z * se_mean)
    # a Gaussian sample variance has standard error sigma^2 sqrt(2 / n)
    se_var = np.sqrt(2 * (d.var(0) ** 2 + k.var(0) ** 2) / n)
    assert np.all(np.abs(d.var(0) - k.var(0)) <= z * se_var)
    assert np.nanmax(np.abs(np.corrcoef(d.T) - np.corrcoef(k.T))) < 0.1


def test_kl_marginals_pass_ks(branch_model):
    x = np.array([[1.0, 1.5]])
    mu, sd = branch_model.predict(x)
    basis = _kl_basis(branch_model, np.random.default_rng(10).normal(size=(300, 2)))
    sampler = tr.TrajectorySampler.kl(branch_model, basis, x)
    rng = np.random.default_rng(11)
    passed = sum(stats.kstest(sampler.draw(500, rng)[:, 0], "norm", args=(mu[0], sd[0])).pvalue > 0.01
                 for _ in range(100))
    assert passed >= 95


def test_kl_rejects_other_kernel(branch_model, sine_model):
    basis = _kl_basis(branch_model, np.random.default_rng(12).normal(size=(100, 2)))
    other = branch_model.with_hyperparameters_of(branch_model.x_doe[:-1], branch_model.y[:-1])
    other = gp.GpModel(gp.Kernel("matern52", other.kernel.length_scales * 1.1, other.kernel.variance),
                       other.x_doe, other.y, other.x_mean, other.x_scale, 0.0)
    with pytest.raises(tr.KernelMismatchError):
        tr.simulate_kl(other, basis, np.zeros((3, 2)), 2, RandomStream(0))


def test_make_sampler_routes_by_size(branch_model):
    pts = np.random.default_rng(13).normal(size=(60, 2))
    assert tr.make_sampler(branch_model, pts, RandomStream(0)).method == "direct"
    assert tr.make_sampler(branch_model, pts, RandomStream(0), direct_max=10).method == "kl"


def test_failure_sums_agree_with_draws(branch_model):
    pts = np.random.default_rng(14).normal(size=(40, 2)) * 2
    s = tr.TrajectorySampler.direct(branch_model, pts)
    w = np.random.default_rng(15).uniform(0.5, 2.0, 40)
    fast = s.failure_sums(4000, np.random.default_rng(16), w)
    slow = (s.draw(4000, np.random.default_rng(17)) <= 0) @ w
    assert abs(fast.mean() - slow.mean()) < 4 * np.sqrt((fast.var() + slow.var()) / 4000) + 1e-12
    per_traj = np.tile(w, (5, 1))
    assert s.failure_sums(5, np.random.default_rng(18), per_traj).shape == (5,)
