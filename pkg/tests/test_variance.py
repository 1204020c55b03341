import itertools
import math

import numpy as np
import pytest

from vbagp import gp
from vbagp import variance as vr
from vbagp.core import IntervalEstimate, InsufficientDataError, RandomStream, empirical_variance_ci
from vbagp.learning import initial_doe, misclassification_prob
from vbagp.populations import as_input_density, sample_is, sample_mc
from vbagp.problems import get_problem
from vbagp.core import MarginalDistribution


@pytest.fixture(scope="module")
def branch_setup():
    p = get_problem("four_branch")
    X = initial_doe(p, 20, RandomStream(21, 1))
    model = gp.fit(X, p.g(X), "matern52", RandomStream(21, 2))
    return p, model


@pytest.fixture(scope="module")
def saturated():
    """Dense design on a linear limit state: sigma_n is negligible on the population."""
    p = get_problem("hyperplane")
    X = initial_doe(p, 40, RandomStream(22, 1), width=4.0)
    return p, gp.fit(X, p.g(X), "matern52", RandomStream(22, 2))


def test_cov_red_values():
    assert vr.cov_red(0.0, 0.0, 0.01) == 0.0
    assert vr.cov_red(4e-9, 5e-9, 1e-3) == pytest.approx(0.0949, abs=1e-4)
    assert vr.cov_red(4e-9, 5e-9, 1e-3) >= math.sqrt(4e-9) / 1e-3
    with pytest.raises(vr.UndefinedCovError):
        vr.cov_red(1e-9, 1e-9, 0.0)


def test_v_x_hand_values():
    assert vr.v_x_from_probabilities([0.0, 1.0]).point == pytest.approx(0.25)
    assert vr.v_x_from_probabilities(np.full(50, 0.3)).point == pytest.approx(0.0, abs=1e-30)
    w = np.array([2.0, 0.5])
    assert vr.v_x_from_probabilities([0.5, 1.0], w).point == pytest.approx(np.var([1.0, 0.5], ddof=1) / 2)


def test_v_gn_hand_values():
    values = np.ones((2, 10))
    values[0, :1] = -1.0
    values[1, :2] = -1.0
    assert vr.v_gn_from_trajectories(values).point == pytest.approx(0.005)
    assert vr.v_gn_from_trajectories(np.tile(values[0], (5, 1))).point == 0.0
    with pytest.raises(InsufficientDataError):
        vr.v_gn_from_trajectories(values[:1])


def test_exact_decomposition_closes():
    # two trajectories by every ordered bootstrap resample of a three-point population
    rng = np.random.default_rng(0)
    traj = rng.normal(size=(4, 3))
    w = np.array([1.0, 0.5, 2.0])
    table = np.array([[np.mean(w[list(idx)] * (t[list(idx)] <= 0)) for idx in itertools.product(range(3), repeat=3)]
                      for t in traj])
    d = vr.exact_decomposition(table)
    assert d["v_x"] + d["v_gn"] + d["v_joint"] == pytest.approx(d["v_tot"], abs=1e-15)
    assert d["v_tot"] == pytest.approx(table.var(), abs=1e-15)


def test_report_joint_term_closes():
    ci = lambda v: IntervalEstimate(v, v, v)  # noqa: E731
    rep = vr.VarianceReport(ci(1e-8), ci(3e-8), 1e-2, 0.02, 100, True, v_tot=ci(4.5e-8), cov_tot=ci(0.02))
    assert rep.v_x.point + rep.v_gn.point + rep.v_joint == pytest.approx(rep.v_tot.point, abs=1e-22)
    assert rep.to_dict()["v_joint"] == pytest.approx(0.5e-8)


def test_v_x_replication_oracle(branch_setup):
    p, model = branch_setup
    pop = sample_mc(p.marginals, 20_000, RandomStream(23))
    est = vr.estimate_v_x(model, pop)
    means = []
    for s in range(200):
        q = sample_mc(p.marginals, 20_000, RandomStream(24, s))
        m, sd = model.predict(q.samples)
        means.append(misclassification_prob(m, sd).mean())
    assert np.var(means, ddof=1) == pytest.approx(est.point, rel=0.25)


def test_v_x_scales_inversely_with_size(branch_setup):
    p, model = branch_setup
    a = vr.estimate_v_x(model, sample_mc(p.marginals, 20_000, RandomStream(25))).point
    b = vr.estimate_v_x(model, sample_mc(p.marginals, 40_000, RandomStream(26))).point
    assert b / a == pytest.approx(0.5, rel=0.3)


def test_saturated_gp_has_negligible_v_gn(saturated):
    p, model = saturated
    pop = sample_mc(p.marginals, 20_000, RandomStream(27))
    est = vr.VarianceEstimator(model, pop, RandomStream(28))
    v_gn, _ = est.v_gn(200)
    assert v_gn.point < 1e-3 * est.v_x().point


def test_estimate_v_gn_from_ensemble(branch_setup):
    from vbagp.trajectories import simulate_direct
    p, model = branch_setup
    pop = sample_mc(p.marginals, 300, RandomStream(29))
    ens = simulate_direct(model, pop.samples, 50, RandomStream(30))
    ci = vr.estimate_v_gn(model, pop, ens)
    assert ci.point == pytest.approx(np.var((ens.values <= 0).mean(1), ddof=1))
    with pytest.raises(ValueError):
        vr.estimate_v_gn(model, sample_mc(p.marginals, 10, RandomStream(0)), ens)


def test_subset_trajectories_match_full_simulation(branch_setup):
    from vbagp.trajectories import simulate_direct
    p, model = branch_setup
    pop = sample_mc(p.marginals, 3000, RandomStream(31))
    est = vr.VarianceEstimator(model, pop, RandomStream(32))
    fast = est.draw_pf(4000)
    full = (simulate_direct(model, pop.samples, 4000, RandomStream(33)).values <= 0).mean(1)
    se = math.sqrt((fast.var() + full.var()) / 4000)
    assert abs(fast.mean() - full.mean()) < 4 * se
    assert abs(fast.mean() - est.p.mean()) < 4 * math.sqrt(fast.var() / 4000)
    assert not empirical_variance_ci(fast).disjoint(empirical_variance_ci(full))


class _Stub(vr.VarianceEstimator):
    """Estimator whose trajectory estimates are normal with a chosen variance."""

    def __init__(self, var, seed):
        self.rng = np.random.default_rng(seed)
        self.level = 0.95
        self._pf_gn = np.empty(0)
        self._pf_tot = np.empty(0)
        self.var = var

    def draw_pf(self, n_t):
        return 0.01 + math.sqrt(self.var) * self.rng.standard_normal(n_t)


def test_widen_returns_immediately_when_disjoint():
    est = _Stub(1e-6, 0)
    ci, n_t, sep = est.widen_v_gn_until_separated(IntervalEstimate(1e-3, 9e-4, 1.1e-3), 50, 3200)
    assert sep and n_t == 50


def test_widen_separates_fourfold_gap():
    v_x = 1e-6
    hits = 0
    for seed in range(100):
        est = _Stub(4 * v_x, seed)
        _, n_t, sep = est.widen_v_gn_until_separated(IntervalEstimate(v_x, 0.9 * v_x, 1.1 * v_x), 50, 3200)
        hits += sep and n_t < 1600
    assert hits >= 95


def _own_interval(v, seed, n=3200):
    """Honest interval for a variance ``v`` from ``n`` draws."""
    return empirical_variance_ci(math.sqrt(v) * np.random.default_rng(10 ** 6 + seed).standard_normal(n))


def test_widen_flags_equal_variances():
    # each doubling is a fresh look at a 95% interval, so a few runs separate by chance
    v = 1e-6
    flagged = 0
    for seed in range(100):
        _, n_t, sep = _Stub(v, seed).widen_v_gn_until_separated(_own_interval(v, seed), 100, 3200)
        flagged += not sep and n_t == 3200
    assert flagged >= 85
    with pytest.raises(ValueError):
        _Stub(v, 0).widen_v_gn_until_separated(IntervalEstimate(v, v, v), 100, 50)


def test_projection_gives_up_early_on_equal_variances():
    v = 1e-6
    early = 0
    for seed in range(100):
        _, n_t, sep = _Stub(v, seed).widen_v_gn_until_separated(_own_interval(v, seed), 100, 3200, project=True)
        early += not sep and n_t < 3200
    assert early >= 80


def test_total_dominates_components(branch_setup):
    p, model = branch_setup
    pop = sample_mc(p.marginals, 20_000, RandomStream(34))
    est = vr.VarianceEstimator(model, pop, RandomStream(35))
    v_x = est.v_x()
    v_gn, _ = est.v_gn(800)
    pf_t, v_tot, cov = est.total(800)
    assert v_tot.point >= max(v_x.point, v_gn.point) - 3 * max(v_tot.half_width, v_x.half_width, v_gn.half_width)
    assert cov.point == pytest.approx(math.sqrt(v_tot.point) / pf_t)
    assert cov.lower <= cov.point <= cov.upper
    # the trajectory mean estimates the average failure probability mean(p), not the kriging-mean count
    assert abs(pf_t - est.p.mean()) < 4 * math.sqrt(v_tot.point / 800)


def test_deterministic_gp_fixed_population_total_variance_is_zero(saturated):
    p, model = saturated
    pop = sample_mc(p.marginals, 5000, RandomStream(36))
    est = vr.VarianceEstimator(model, pop, RandomStream(37))
    assert np.ptp(est.draw_pf(50)) == 0.0


def test_zero_probability_total_is_undefined(saturated):
    p, model = saturated
    far = sample_mc([MarginalDistribution(-20.0, 0.1)] * 2, 1000, RandomStream(38))
    est = vr.VarianceEstimator(model, far, RandomStream(39))
    with pytest.raises(vr.UndefinedCovError):
        est.total(10)


def test_importance_weights_path(branch_setup):
    p, model = branch_setup
    fx = as_input_density(p.marginals)
    aux = as_input_density([MarginalDistribution(0.0, 2.0)] * 2)
    pop = sample_is(fx, aux, 20_000, RandomStream(40))
    est = vr.VarianceEstimator(model, pop, RandomStream(41))
    assert est.pf == pytest.approx(float(np.mean(pop.weights * (est.mean <= 0))))
    pf_t, v_tot, _ = est.total(400)
    assert abs(pf_t - np.mean(pop.weights * est.p)) < 4 * math.sqrt(v_tot.point / 400)
    assert est.v_x().point == pytest.approx(np.var(pop.weights * est.p, ddof=1) / pop.size)


def test_module_level_helpers(branch_setup):
    p, model = branch_setup
    pop = sample_mc(p.marginals, 5000, RandomStream(42))
    pf_t, v, cov = vr.estimate_total(model, pop, 100, RandomStream(43))
    assert pf_t > 0 and v.point > 0
    ci, n_t = vr.widen_v_gn_until_separated(IntervalEstimate(1.0, 1.0, 1.0), model, pop, RandomStream(44),
                                            n_t0=50, max_nt=100)[:2]
    assert n_t == 50
