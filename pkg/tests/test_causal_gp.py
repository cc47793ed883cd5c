import math

import numpy as np
import pytest

from mergeeig.causal_gp import (
    LmcKernelParams,
    build_sigma_blocks,
    condition,
    eig_f,
    eig_tau_x0,
    fit_host,
    kernel_eval,
    log_marginal_likelihood,
)
from mergeeig.dataset import TabularDataset
from mergeeig.errors import ConfigError, DimensionMismatch, EmptyArm
from oracles import gaussian_mi_monte_carlo, lmc_blocks_straight_line


def unit_params(d=2, noise=0.5):
    return LmcKernelParams(np.eye(2), np.eye(2), np.ones(d), np.ones(d), noise, noise)


def random_params(rng, d):
    def psd():
        L = rng.normal(size=(2, 2)) * 0.8
        return L @ L.T + 0.05 * np.eye(2)

    return LmcKernelParams(psd(), psd(), rng.uniform(0.5, 2, d), rng.uniform(0.5, 2, d), *rng.uniform(0.2, 1, 2))


def host_data(rng, n, d=2, both_arms=True):
    X = rng.normal(size=(n, d))
    t = np.arange(n) % 2 if both_arms else np.zeros(n)
    return TabularDataset(X, t, np.sin(X[:, 0]) + t + 0.3 * rng.normal(size=n))


def test_params_validation():
    with pytest.raises(ConfigError):
        LmcKernelParams(np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2), [1.0], [1.0], 1.0, 1.0)
    with pytest.raises(ConfigError):
        LmcKernelParams(np.eye(2), np.eye(2), [0.0], [1.0], 1.0, 1.0)
    p = random_params(np.random.default_rng(0), 3)
    q = LmcKernelParams.from_vector(p.to_vector(), 3)
    assert np.allclose(p.A0, q.A0) and np.allclose(p.R1, q.R1) and math.isclose(p.sigma1_sq, q.sigma1_sq)


def test_kernel_examples():
    p = random_params(np.random.default_rng(1), 2)
    x = np.array([0.3, -0.2])
    assert np.allclose(kernel_eval(p, x, x), p.A0 + p.A1, atol=1e-14)
    assert np.all(np.abs(kernel_eval(p, x, x + 1e3)) < 1e-300)
    u = unit_params()
    assert np.allclose(kernel_eval(u, [0.0, 0.0], [1.0, 0.0]), 2 * math.exp(-0.5) * np.eye(2), atol=1e-12)
    K = kernel_eval(p, x, [1.0, 2.0])
    assert np.allclose(K, kernel_eval(p, [1.0, 2.0], x).T)
    with pytest.raises(DimensionMismatch):
        kernel_eval(p, [1.0], [1.0, 2.0])


def test_fit_host_contracts():
    rng = np.random.default_rng(2)
    host = host_data(rng, 30)
    init = unit_params()
    params, state = fit_host(init, host, max_iters=0)
    assert params is init and state.n == 30
    with pytest.raises(EmptyArm):
        fit_host(init, host_data(rng, 10, both_arms=False))
    noise = TabularDataset(rng.normal(size=(40, 2)), np.arange(40) % 2, rng.normal(size=40))
    small = LmcKernelParams(1e-3 * np.eye(2), 1e-3 * np.eye(2), np.ones(2), np.ones(2), 1.0, 1.0)
    y = noise.y - noise.y.mean()
    order = np.argsort(noise.t, kind="stable")
    before = log_marginal_likelihood(small, noise.X[order], noise.t[order], y[order])
    fitted, _ = fit_host(small, noise, max_iters=200, restarts=1)
    after = log_marginal_likelihood(fitted, noise.X[order], noise.t[order], y[order])
    assert after >= before


def test_lengthscale_recovery():
    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        n = 80
        X = rng.uniform(-4, 4, size=(n, 1))
        K = np.exp(-0.5 * (X - X.T) ** 2) + 1e-8 * np.eye(n)
        f = np.linalg.cholesky(K) @ rng.normal(size=n)
        t = np.arange(n) % 2
        host = TabularDataset(X, t, f + 0.1 * rng.normal(size=n))
        init = LmcKernelParams(np.array([[1.0, 0.9], [0.9, 1.0]]), 0.01 * np.eye(2), [4.0], [4.0], 0.1, 0.1)
        params, _ = fit_host(init, host, max_iters=300, restarts=1, seed=seed)
        ratios.append(math.sqrt(params.R0[0]))
    assert 0.5 <= np.median(ratios) <= 2.0


def test_sigma_blocks_examples():
    rng = np.random.default_rng(3)
    host = host_data(rng, 6)
    state = condition(unit_params(), host)
    empty = TabularDataset.empty(2)
    b = build_sigma_blocks(state, empty)
    assert b.sigma1.shape == (0, 0) and np.allclose(b.sigma, b.sigma2)
    zero = LmcKernelParams(np.zeros((2, 2)), np.zeros((2, 2)), np.ones(2), np.ones(2), 0.3, 0.7)
    cand = TabularDataset(rng.normal(size=(4, 2)), [0, 1, 1, 0])
    b = build_sigma_blocks(condition(zero, host), cand)
    assert np.allclose(b.sigma1, np.diag([0.3, 0.3, 0.7, 0.7])) and not np.any(b.sigma12)


def test_sigma_blocks_match_straight_line():
    rng = np.random.default_rng(4)
    p = unit_params()
    host = host_data(rng, 3)
    state = condition(p, host)
    x_new = rng.normal(size=2)
    for t_new in (0, 1):
        b = build_sigma_blocks(state, TabularDataset(x_new[None, :], [t_new]))
        s1, s12, s2 = lmc_blocks_straight_line(
            p.A0.tolist(), p.A1.tolist(), p.R0, p.R1, p.sigma0_sq, p.sigma1_sq,
            state.X.tolist(), state.t.astype(int).tolist(), x_new, t_new,
        )
        jit = 1e-8 * np.mean(np.diag(s2))
        assert abs(b.sigma1[0, 0] - s1) < 1e-7
        assert np.allclose(b.sigma12[0], s12, atol=1e-10)
        assert np.allclose(b.sigma2, s2 + jit * np.eye(3), atol=1e-10)


def test_eig_f_examples():
    rng = np.random.default_rng(5)
    host = host_data(rng, 8)
    state = condition(unit_params(), host)
    assert eig_f(state, TabularDataset.empty(2)) == 0.0
    zero = LmcKernelParams(np.zeros((2, 2)), np.zeros((2, 2)), np.ones(2), np.ones(2), 0.3, 0.7)
    cand = TabularDataset(rng.normal(size=(3, 2)), [0, 1, 1])
    assert eig_f(condition(zero, host), cand) == pytest.approx(0.0, abs=1e-7)
    x = rng.normal(size=(1, 2))
    for t in (0, 1):
        one = TabularDataset(x, [t])
        v = state.posterior_cov(x, [t])[0, 0]
        s2 = state.params.noise[t]
        assert eig_f(state, one) == pytest.approx(0.5 * math.log((v + s2) / s2), abs=1e-7)


def test_eig_tau_zero_cross_block_and_empty():
    rng = np.random.default_rng(6)
    host = host_data(rng, 8)
    # identical arms (A0 = A1 = all-ones) make tau identically zero
    p = LmcKernelParams(np.ones((2, 2)), np.ones((2, 2)), np.ones(2), np.ones(2), 0.5, 0.5)
    state = condition(p, host)
    cand = TabularDataset(rng.normal(size=(5, 2)), [0, 1, 0, 1, 1])
    assert np.max(np.abs(build_sigma_blocks(state, cand).sigma12)) < 1e-12
    assert eig_tau_x0(state, cand) == pytest.approx(0.0, abs=1e-9)
    assert eig_tau_x0(condition(unit_params(), host), TabularDataset.empty(2)) == 0.0


def test_eig_tau_matches_monte_carlo_mi():
    rng = np.random.default_rng(7)
    for _ in range(3):
        p = random_params(rng, 2)
        host = host_data(rng, 3)
        state = condition(p, host)
        cand = TabularDataset(rng.normal(size=(2, 2)), rng.integers(0, 2, 2))
        b = build_sigma_blocks(state, cand)
        mi, se = gaussian_mi_monte_carlo(b.sigma, 2, draws=200_000, seed=1)
        assert abs(eig_tau_x0(state, cand) - mi) <= 3 * se


def test_gp_properties():
    rng = np.random.default_rng(8)
    p = random_params(rng, 2)
    state = condition(p, host_data(rng, 10))
    cand = TabularDataset(rng.normal(size=(6, 2)), [0, 1, 0, 1, 1, 0])
    b = build_sigma_blocks(state, cand)
    assert np.linalg.eigvalsh(b.sigma)[0] > -1e-9
    perm = TabularDataset(cand.X[[2, 1, 0, 4, 3, 5]], cand.t[[2, 1, 0, 4, 3, 5]])
    assert eig_tau_x0(state, perm) == pytest.approx(eig_tau_x0(state, cand), abs=1e-9)
    assert eig_f(state, perm) == pytest.approx(eig_f(state, cand), abs=1e-9)
    with_y = TabularDataset(cand.X, cand.t, rng.normal(size=6))
    assert eig_tau_x0(state, with_y) == eig_tau_x0(state, cand)
    vals = [eig_tau_x0(state, cand.subset(range(k))) for k in range(1, 7)]
    assert np.all(np.diff(vals) >= -1e-9) and min(vals) >= 0


def test_cate_prediction_tracks_signal():
    rng = np.random.default_rng(9)
    X = rng.uniform(-2, 2, size=(120, 1))
    t = np.arange(120) % 2
    host = TabularDataset(X, t, X[:, 0] + t * 2.0 + 0.1 * rng.normal(size=120))
    init = LmcKernelParams(np.array([[1.0, 0.9], [0.9, 1.0]]), np.eye(2), [2.0], [2.0], 0.1, 0.1)
    _, state = fit_host(init, host, max_iters=100, restarts=1)
    assert np.allclose(state.predict_cate(np.array([[0.0], [1.0]])), 2.0, atol=0.3)
