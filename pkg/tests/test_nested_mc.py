import math

import numpy as np
import pytest
from scipy import stats

from mergeeig.bayes_linear import FeatureMap, GaussianPosterior, Term, eig_theta, eig_theta_c_paper, fit
from mergeeig.dataset import TabularDataset
from mergeeig.errors import ConditionalSamplerUnsupported, ConfigError, NonFiniteLikelihood, SamplerFailure
from mergeeig.nested_mc import (
    NmcConfig,
    PosteriorSampler,
    conjugate_linear_sampler,
    convergence_probe,
    eig_nmc,
    eig_rb,
    eig_theta_c_nmc,
)
from test_bayes_linear import block_diagonal_instance

SMALL = NmcConfig(N=200, M1=400)


def small_instance(seed=0, n0=30, ne=8, sigma2=1.0):
    rng = np.random.default_rng(seed)
    fm = FeatureMap.polynomial(2)
    host = TabularDataset(rng.normal(size=(n0, 2)), rng.integers(0, 2, n0), rng.normal(size=n0))
    post = fit(fm, host, sigma2=sigma2)
    cand = TabularDataset(rng.normal(size=(ne, 2)), rng.integers(0, 2, ne))
    return fm, post, cand


def combined_se(a, b):
    return math.hypot(a.standard_error, b.standard_error)


def test_config_validation():
    with pytest.raises(ConfigError):
        NmcConfig(N=0)
    assert NmcConfig(M1=7).m2 == 7 and NmcConfig(M1=7, M2=3).m2 == 3


def test_empty_candidate_is_exactly_zero():
    fm, post, _ = small_instance()
    smp = conjugate_linear_sampler(post, fm)
    empty = TabularDataset.empty(2)
    for fn in (eig_nmc, eig_rb, eig_theta_c_nmc):
        assert fn(smp, empty, SMALL).value == 0.0


def test_uninformative_outcomes_give_zero():
    rng = np.random.default_rng(1)
    fm = FeatureMap.polynomial(2)
    # precisions are in units of 1 / sigma2, so this prior has unit covariance
    prior = GaussianPosterior(np.zeros(fm.p), 1e6 * np.eye(fm.p), sigma2=1e6)
    cand = TabularDataset(rng.normal(size=(10, 2)), rng.integers(0, 2, 10))
    est = eig_nmc(conjugate_linear_sampler(prior, fm), cand, SMALL)
    assert abs(est.value) <= 3 * est.standard_error + 1e-12


@pytest.mark.parametrize("fn", [eig_nmc, eig_rb])
def test_estimators_match_closed_form(fn):
    fm, post, cand = small_instance(2)
    truth = eig_theta(post, fm, cand)
    smp = conjugate_linear_sampler(post, fm)
    errs, ses = [], []
    for s in range(5):
        est = fn(smp, cand, NmcConfig(seed=s))
        errs.append(abs(est.value - truth))
        ses.append(est.standard_error)
    assert np.median(errs) <= max(0.05 * truth, 3 * np.median(ses))


def test_determinism_and_config_echo():
    fm, post, cand = small_instance(3)
    smp = conjugate_linear_sampler(post, fm)
    a, b = eig_nmc(smp, cand, SMALL), eig_nmc(smp, cand, SMALL)
    assert a == b and a.config["N"] == 200 and a.config["estimator"] == "nmc"
    assert eig_theta_c_nmc(smp, cand, SMALL) == eig_theta_c_nmc(smp, cand, SMALL)
    assert a.standard_error >= 0


def test_targeted_equals_full_without_nuisance():
    rng = np.random.default_rng(4)
    fm = FeatureMap((), (Term("c"), Term("c", (0,))), d=1)
    post = fit(fm, TabularDataset(rng.normal(size=(20, 1)), np.ones(20), rng.normal(size=20)))
    cand = TabularDataset(rng.normal(size=(6, 1)), np.ones(6))
    smp = conjugate_linear_sampler(post, fm)
    full, targ = eig_nmc(smp, cand, SMALL), eig_theta_c_nmc(smp, cand, SMALL)
    assert abs(full.value - targ.value) <= 3 * combined_se(full, targ)


def test_targeted_matches_block_formula_when_decoupled():
    rng = np.random.default_rng(5)
    fm, post, cand = block_diagonal_instance(rng, ne=4)
    truth = eig_theta_c_paper(post, fm, cand)
    est = eig_theta_c_nmc(conjugate_linear_sampler(post, fm), cand, NmcConfig(N=400, M1=800))
    assert abs(est.value - truth) <= max(0.07 * truth, 3 * est.standard_error)


def test_targeted_untreated_candidate_near_zero():
    rng = np.random.default_rng(6)
    fm, post, cand = block_diagonal_instance(rng, ne=5)
    untreated = TabularDataset(cand.X, np.zeros(cand.n))
    est = eig_theta_c_nmc(conjugate_linear_sampler(post, fm), untreated, SMALL)
    assert abs(est.value) <= 3 * est.standard_error + 1e-12


def test_targeted_not_above_full():
    for seed in range(3):
        fm, post, cand = small_instance(10 + seed)
        smp = conjugate_linear_sampler(post, fm)
        full, targ = eig_nmc(smp, cand, SMALL), eig_theta_c_nmc(smp, cand, SMALL)
        assert targ.value <= full.value + 3 * combined_se(full, targ)


def test_small_noise_stays_finite():
    fm, post, cand = small_instance(7, n0=50, ne=4, sigma2=1e-4)
    smp = conjugate_linear_sampler(post, fm)
    for fn in (eig_nmc, eig_rb, eig_theta_c_nmc):
        assert np.isfinite(fn(smp, cand, NmcConfig(N=50, M1=100)).value)


def test_sampler_moments():
    fm, post, _ = small_instance(8)
    smp = conjugate_linear_sampler(post, fm)
    draws = smp.draw(100_000, np.random.default_rng(0))
    se = np.sqrt(np.diag(post.covariance) / len(draws))
    assert np.all(np.abs(draws.mean(0) - post.mean) <= 4 * se)


def test_conditional_draws_match_gaussian_conditioning():
    fm, post, _ = small_instance(9)
    smp = conjugate_linear_sampler(post, fm)
    nc, c = smp.nc_index, smp.c_index
    S = post.covariance
    cond_cov = S[np.ix_(nc, nc)] - S[np.ix_(nc, c)] @ np.linalg.solve(S[np.ix_(c, c)], S[np.ix_(c, nc)])
    theta_c = post.mean[c] + 0.3
    cond_mean = post.mean[nc] + S[np.ix_(nc, c)] @ np.linalg.solve(S[np.ix_(c, c)], theta_c - post.mean[c])
    draws = smp.draw_nc_given_c(theta_c[None, :], 100_000, np.random.default_rng(1))[0]
    se = np.sqrt(np.diag(cond_cov) / len(draws))
    assert np.all(np.abs(draws.mean(0) - cond_mean) <= 4 * se)
    assert np.allclose(np.cov(draws.T), cond_cov, atol=0.05 * np.abs(cond_cov).max())
    at_mean = smp.draw_nc_given_c(post.mean[c][None, :], 100_000, np.random.default_rng(2))[0]
    assert np.all(np.abs(at_mean.mean(0) - post.mean[nc]) <= 4 * se)


def test_scalar_sampler_ks():
    fm = FeatureMap((Term("nc"),), (), d=1)
    post = GaussianPosterior(np.array([0.7]), np.array([[4.0]]), sigma2=2.0)
    draws = conjugate_linear_sampler(post, fm).draw(5000, np.random.default_rng(3))[:, 0]
    assert stats.kstest(draws, "norm", args=(0.7, math.sqrt(0.5))).pvalue > 1e-3


def test_unsupported_conditional_sampler():
    class Plain(PosteriorSampler):
        sigma2 = 1.0
        nc_index = np.arange(1)
        c_index = np.arange(1, 2)

    with pytest.raises(ConditionalSamplerUnsupported):
        Plain().draw_nc_given_c(np.zeros((1, 1)), 2, np.random.default_rng(0))


def test_sampler_failures_surface():
    fm, post, cand = small_instance(11)
    smp = conjugate_linear_sampler(post, fm)

    class Broken(type(smp)):
        def draw(self, n, rng):
            out = super().draw(n, rng)
            out[0, 0] = np.nan
            return out

    with pytest.raises(SamplerFailure):
        eig_nmc(Broken(post, fm), cand, SMALL)

    class Infinite(type(smp)):
        def log_lik(self, ctx, y, theta):
            out = super().log_lik(ctx, y, theta)
            out[:, 0] = np.inf
            return out

    with pytest.raises(NonFiniteLikelihood):
        eig_nmc(Infinite(post, fm), cand, SMALL)


def test_convergence_probe_shapes_and_rates():
    fm, post, cand = small_instance(12, n0=60, ne=3)
    smp = conjugate_linear_sampler(post, fm)
    truth = eig_theta(post, fm, cand)
    rows, slopes = convergence_probe(smp, cand, truth, [50, 500, 5000], [200], reps=6)
    assert len(rows) == 3 and -0.75 <= slopes["N"][200] <= -0.25
    rows, slopes = convergence_probe(smp, cand, truth, [1000], [2, 20, 200], reps=6)
    rmse = [r.rmse for r in rows]
    assert rmse[0] >= rmse[-1]
    rows, _ = convergence_probe(smp, cand, truth, [20], [20], reps=1)
    assert rows[0].reps == 1 and np.isfinite(rows[0].rmse)
