import math

import numpy as np
import pytest

from mergeeig.bayes_linear import (
    FeatureMap,
    GaussianPosterior,
    Term,
    cate_predict,
    conjugate_prior,
    eig_theta,
    eig_theta_c_exact,
    eig_theta_c_paper,
    eig_theta_shared,
    features,
    fit,
    pehe,
    posterior_update,
)
from mergeeig.dataset import TabularDataset
from mergeeig.errors import DimensionMismatch, MissingOutcomes, MissingTrueCate
from mergeeig.mpc import PartyNetwork, reveal
from instances import block_diagonal_instance, random_linear_instance
from oracles import c_marginal_eig_oracle, linear_eig_entropy_oracle

ONE_D = FeatureMap((Term("nc"), Term("nc", (0,))), (Term("c"), Term("c", (0,))), d=1)


def test_features_examples():
    assert np.array_equal(features(ONE_D, [2.0], 0), [1, 2, 0, 0])
    assert np.array_equal(features(ONE_D, [2.0], 1), [1, 2, 1, 2])
    fm = FeatureMap((Term("nc", (0,), (2,)),), (), d=1)
    assert features(fm, [3.0], 1)[0] == 9
    with pytest.raises(DimensionMismatch):
        features(ONE_D, [1.0, 2.0], 1)


def test_descriptor_feature_map():
    fm = FeatureMap.from_descriptors(
        [{"block": "nc", "vars": []}, {"block": "nc", "vars": [1], "powers": [2]}, {"block": "c", "vars": [0, 1]}], d=2
    )
    assert (fm.p_nc, fm.p_c) == (2, 1)
    assert np.allclose(features(fm, [2.0, 3.0], 1), [1, 9, 6])


def test_posterior_update_examples():
    fm = FeatureMap((Term("nc"),), (), d=1)
    prior = conjugate_prior(fm)
    assert posterior_update(prior, fm, TabularDataset.empty(1)) is prior
    post = posterior_update(prior, fm, TabularDataset([[0.0]], [0], [2.0]))
    assert post.precision[0, 0] == 2.0 and post.mean[0] == 1.0
    with pytest.raises(MissingOutcomes):
        posterior_update(prior, fm, TabularDataset([[0.0]], [0]))


def test_sequential_equals_joint():
    rng = np.random.default_rng(0)
    fm = FeatureMap.polynomial(3, degree=2)
    a = TabularDataset(rng.normal(size=(30, 3)), rng.integers(0, 2, 30), rng.normal(size=30))
    b = TabularDataset(rng.normal(size=(20, 3)), rng.integers(0, 2, 20), rng.normal(size=20))
    prior = conjugate_prior(fm)
    seq = posterior_update(posterior_update(prior, fm, a), fm, b)
    joint = posterior_update(prior, fm, a.concat(b))
    assert np.allclose(seq.precision, joint.precision, atol=1e-9)
    assert np.allclose(seq.mean, joint.mean, atol=1e-9)


def test_eig_theta_examples():
    fm = FeatureMap((Term("nc"),), (), d=1)
    prior = conjugate_prior(fm)
    assert eig_theta(prior, fm, TabularDataset.empty(1)) == 0.0
    assert eig_theta(prior, fm, TabularDataset([[0.0]], [0])) == pytest.approx(0.5 * math.log(2), abs=1e-12)
    rng = np.random.default_rng(1)
    fm = FeatureMap.polynomial(2)
    post = fit(fm, TabularDataset(rng.normal(size=(10, 2)), rng.integers(0, 2, 10), rng.normal(size=10)))
    row = TabularDataset(rng.normal(size=(1, 2)), [1])
    vals = []
    for k in range(1, 6):
        cand = TabularDataset(np.repeat(row.X, k, axis=0), np.ones(k))
        v = eig_theta(post, fm, cand)
        Phi = fm.design(cand.X, cand.t)
        assert v == pytest.approx(linear_eig_entropy_oracle(post.precision, Phi, post.sigma2), abs=1e-9)
        vals.append(v)
    inc = np.diff(vals)
    assert np.all(inc > 0) and np.all(np.diff(inc) < 0)


def test_eig_theta_matches_entropy_oracle_random():
    rng = np.random.default_rng(2)
    for _ in range(30):
        fm, post, cand = random_linear_instance(rng)
        Phi = fm.design(cand.X, cand.t)
        assert eig_theta(post, fm, cand) == pytest.approx(
            linear_eig_entropy_oracle(post.precision, Phi, post.sigma2), abs=1e-9
        )
        c_idx = np.arange(fm.p_nc, fm.p)
        assert eig_theta_c_exact(post, fm, cand) == pytest.approx(
            c_marginal_eig_oracle(post.precision, Phi, c_idx, post.sigma2), abs=1e-9
        )


def test_c_block_examples():
    rng = np.random.default_rng(3)
    fm, post, cand = random_linear_instance(rng)
    untreated = TabularDataset(cand.X, np.zeros(cand.n))
    assert eig_theta_c_paper(post, fm, untreated) == 0.0
    assert eig_theta(post, fm, untreated) > 0
    assert eig_theta_c_paper(post, fm, TabularDataset.empty(fm.d)) == 0.0
    # controls still sharpen the exact theta_c marginal through the nc-c
    # correlation of the host posterior
    Phi = fm.design(untreated.X, untreated.t)
    c_idx = np.arange(fm.p_nc, fm.p)
    assert eig_theta_c_exact(post, fm, untreated) == pytest.approx(
        c_marginal_eig_oracle(post.precision, Phi, c_idx), abs=1e-9
    )
    # without that correlation untreated rows carry no theta_c information
    fm, post, cand = block_diagonal_instance(rng)
    untreated = TabularDataset(cand.X, np.zeros(cand.n))
    assert eig_theta_c_exact(post, fm, untreated) == pytest.approx(0.0, abs=1e-12)


def test_pure_cate_model_reduces_to_full():
    rng = np.random.default_rng(4)
    fm = FeatureMap((), (Term("c"), Term("c", (0,)), Term("c", (1,))), d=2)
    post = fit(fm, TabularDataset(rng.normal(size=(25, 2)), rng.integers(0, 2, 25), rng.normal(size=25)))
    cand = TabularDataset(rng.normal(size=(15, 2)), rng.integers(0, 2, 15))
    assert eig_theta_c_paper(post, fm, cand) == pytest.approx(eig_theta(post, fm, cand), abs=1e-9)


def test_block_diagonal_exact_equals_block_formula():
    rng = np.random.default_rng(5)
    for _ in range(10):
        fm, post, cand = block_diagonal_instance(rng)
        assert np.max(np.abs(post.precision[fm.nc_slice, fm.c_slice])) < 1e-10
        assert eig_theta_c_exact(post, fm, cand) == pytest.approx(eig_theta_c_paper(post, fm, cand), abs=1e-9)


def test_outcome_independence_and_monotonicity():
    rng = np.random.default_rng(6)
    fm, post, cand = random_linear_instance(rng)
    with_y = TabularDataset(cand.X, cand.t, rng.normal(size=cand.n))
    assert eig_theta(post, fm, with_y) == eig_theta(post, fm, cand)
    assert eig_theta_c_paper(post, fm, with_y) == eig_theta_c_paper(post, fm, cand)
    for _ in range(20):
        fm, post, cand = random_linear_instance(rng)
        bigger = cand.concat(TabularDataset(rng.normal(size=(3, fm.d)), rng.integers(0, 2, 3)))
        assert eig_theta(post, fm, bigger) >= eig_theta(post, fm, cand)
        assert eig_theta_c_paper(post, fm, cand) >= 0


def test_cate_predict():
    fm = FeatureMap((Term("nc"),), (Term("c"),), d=2)
    post = GaussianPosterior(np.array([1.0, 5.0]), np.eye(2))
    assert np.allclose(cate_predict(post, fm, np.zeros((4, 2))), 5.0)
    zero = GaussianPosterior(np.zeros(2), np.eye(2))
    assert np.allclose(cate_predict(zero, fm, np.ones((3, 2))), 0.0)


def test_cate_predict_matches_monte_carlo():
    rng = np.random.default_rng(7)
    fm = FeatureMap.polynomial(2)
    post = fit(fm, TabularDataset(rng.normal(size=(20, 2)), rng.integers(0, 2, 20), rng.normal(size=20)))
    x = rng.normal(size=(1, 2))
    draws = rng.multivariate_normal(post.mean, post.covariance, size=100_000)
    diffs = draws @ (fm.design(x, [1])[0] - fm.design(x, [0])[0])
    se = diffs.std() / math.sqrt(len(diffs))
    assert abs(diffs.mean() - cate_predict(post, fm, x)[0]) <= 3 * se


def test_pehe():
    tau = np.array([1.0, 2.0, 3.0])
    assert pehe(tau, tau) == 0.0
    assert pehe(tau + 0.5, tau) == pytest.approx(0.25)
    assert pehe(tau + 0.5, tau, root=True) == pytest.approx(0.5)
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=50), rng.normal(size=50)
    assert pehe(a, b) == pytest.approx(sum((u - v) ** 2 for u, v in zip(a, b)) / 50)
    with pytest.raises(MissingTrueCate):
        pehe(a, None)


@pytest.mark.parametrize("target", ["full", "c"])
def test_secure_eig_matches_plaintext(target):
    rng = np.random.default_rng(9)
    fm = FeatureMap.polynomial(4)
    host = TabularDataset(rng.normal(size=(100, 4)), rng.integers(0, 2, 100), rng.normal(size=100))
    post = fit(fm, host)
    net = PartyNetwork(2, seed=1)
    assert abs(reveal(eig_theta_shared(post, fm, TabularDataset.empty(4), net, target=target), net)) <= 3e-2
    cand = TabularDataset(rng.normal(size=(80, 4)) + 0.5, rng.integers(0, 2, 80))
    plain = eig_theta(post, fm, cand) if target == "full" else eig_theta_c_paper(post, fm, cand)
    n_before = len(net.transcript)
    got = reveal(eig_theta_shared(post, fm, cand, net, target=target), net)
    assert abs(got - plain) <= 1e-2
    # candidate rows leave the site only as shares
    kinds = {m.kind for m in net.transcript[n_before:]}
    assert kinds <= {"share", "beaver_open", "reveal"}
