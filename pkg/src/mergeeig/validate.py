"""Fast property suite behind ``mergeeig validate``.

Each check recomputes a quantity by an independent route and reports
pass/fail; the full suites live in the test tree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import bayes_linear as bl
from .dataset import TabularDataset


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_eig_entropy(seed: int) -> CheckResult:
    """Closed-form EIG against the entropy difference of explicit covariances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 20))
        fm = bl.FeatureMap.polynomial(d)
        host = TabularDataset(rng.normal(size=(30, d)), rng.integers(0, 2, 30), rng.normal(size=30))
        cand = TabularDataset(rng.normal(size=(n, d)), rng.integers(0, 2, n))
        post = bl.fit(fm, host, 1.0, 1.0)
        Phi = fm.design(cand.X, cand.t)
        cov0 = np.linalg.inv(post.precision)
        cov1 = np.linalg.inv(post.precision + Phi.T @ Phi)
        direct = 0.5 * (np.linalg.slogdet(cov0)[1] - np.linalg.slogdet(cov1)[1])
        worst = max(worst, abs(bl.eig_theta(post, fm, cand) - direct))
    return CheckResult("eig_theta vs entropy difference", bool(worst < 1e-8), f"max abs error {worst:.2e}")


def check_share_reconstruction(seed: int) -> CheckResult:
    from .mpc import PartyNetwork, reveal_ring, share

    rng = np.random.default_rng(seed)
    net = PartyNetwork(2, seed=seed)
    x = rng.integers(0, 2**64, size=100_000, dtype=np.uint64)
    fails = int(np.sum(reveal_ring(share(x, net), net) != x))
    return CheckResult("share reconstruction", fails == 0, f"{fails} failures in {x.size}")


def check_sensitivity(seed: int) -> CheckResult:
    """Neighbouring designs never move the log-det statistic beyond M d / sqrt(c)."""
    from .privacy import SensitivityInputs, linear_statistic, sensitivity_linear_eig

    rng = np.random.default_rng(seed)
    worst_ratio = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 5))
        M, c = rng.uniform(0.5, 3), rng.uniform(0.1, 4)
        X = rng.uniform(-M, M, size=(int(rng.integers(1, 8)), d))
        X2 = X.copy()
        X2[rng.integers(len(X))] = rng.choice([-M, M], d)
        P = c * np.eye(d)
        gap = abs(linear_statistic(P, X2) - linear_statistic(P, X))
        worst_ratio = max(worst_ratio, gap / sensitivity_linear_eig(SensitivityInputs(M, d, c)))
    return CheckResult("sensitivity bound", worst_ratio <= 1.0, f"max gap / bound {worst_ratio:.3f}")


def check_exponential(seed: int) -> CheckResult:
    from .privacy import DpParams, selection_probabilities

    u = np.array([0.0, 0.5, 1.0, 2.0])
    dp = DpParams(2.0, 1.0)
    p = selection_probabilities(u, dp)
    draws = np.random.default_rng(seed).choice(len(p), size=10_000, p=p)
    counts = np.bincount(draws, minlength=len(p))
    pval = stats.chisquare(counts, 10_000 * p).pvalue
    return CheckResult("exponential mechanism frequencies", bool(pval > 1e-3), f"chi-square p = {pval:.3f}")


def check_gp_tau(seed: int) -> CheckResult:
    from . import causal_gp as gp

    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(10):
        params = gp.LmcKernelParams.default(2, noise=0.3)
        host = TabularDataset(rng.normal(size=(12, 2)), np.arange(12) % 2, rng.normal(size=12))
        state = gp.condition(params, host)
        cand = TabularDataset(rng.normal(size=(4, 2)), rng.integers(0, 2, 4))
        worst = min(worst, gp.eig_tau_x0(state, cand))
    return CheckResult("GP tau EIG non-negative", worst >= 0.0, f"min value {worst:.3e}")


CHECKS = (check_eig_entropy, check_share_reconstruction, check_sensitivity, check_exponential, check_gp_tau)


def run_checks(seed: int = 0) -> list[CheckResult]:
    return [check(seed) for check in CHECKS]
