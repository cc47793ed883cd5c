"""Rank metrics, outcome-free baselines and the PEHE ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .dataset import TabularDataset
from .errors import BadK, LengthMismatch, SingularCovariance


def rank_from_scores(scores, descending: bool = True) -> np.ndarray:
    """Site indices ordered best first; ties go to the lower index."""
    s = np.asarray(scores, dtype=float)
    key = -s if descending else s
    return np.lexsort((np.arange(len(s)), key))


def _positions(ranking) -> dict:
    return {site: pos for pos, site in enumerate(ranking)}


def spearman_rho(r1, r2) -> float:
    """Rank correlation of two orderings of the same sites."""
    r1, r2 = list(r1), list(r2)
    if len(r1) != len(r2) or set(r1) != set(r2):
        raise LengthMismatch("rankings must order the same sites")
    n = len(r1)
    if n < 2:
        return 1.0
    p1, p2 = _positions(r1), _positions(r2)
    d2 = sum((p1[s] - p2[s]) ** 2 for s in r1)
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def precision_at_k(predicted, truth, k: int) -> float:
    predicted, truth = list(predicted), list(truth)
    if len(predicted) != len(truth):
        raise LengthMismatch("rankings differ in length")
    if not 1 <= k <= len(truth):
        raise BadK(f"k={k} outside 1..{len(truth)}")
    return len(set(predicted[:k]) & set(truth[:k])) / k


# -- baselines ------------------------------------------------------------
@dataclass(frozen=True)
class LogisticFit:
    intercept: float
    coef: np.ndarray

    def logit(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coef

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.logit(X))

    def log_loss(self, X, t) -> float:
        z = self.logit(X)
        t = np.asarray(t, dtype=float)
        return float(-np.mean(t * log_expit(z) + (1 - t) * log_expit(-z)))


def fit_logistic(X, t, l2: float = 1e-4) -> LogisticFit:
    """Ridge-penalized logistic regression on standardized columns; the
    returned coefficients are on the original scale."""
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    mu, sd = X.mean(0), X.std(0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (X - mu) / sd
    n = len(t)

    def loss(w):
        z = w[0] + Z @ w[1:]
        val = -np.sum(t * log_expit(z) + (1 - t) * log_expit(-z)) / n + 0.5 * l2 * w[1:] @ w[1:]
        r = (expit(z) - t) / n
        grad = np.concatenate([[r.sum()], Z.T @ r + l2 * w[1:]])
        return val, grad

    res = minimize(loss, np.zeros(X.shape[1] + 1), jac=True, method="L-BFGS-B")
    w = res.x
    coef = w[1:] / sd
    return LogisticFit(float(w[0] - mu @ coef), coef)


def _gaussian_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(0)
    S = np.atleast_2d(np.cov(X.T))
    # constant or collinear columns: ridge towards the mean variance
    for ridge in (0.0, 1e-6, 1e-4, 1e-2):
        R = S + ridge * max(float(np.mean(np.diag(S))), 1e-12) * np.eye(len(mu))
        try:
            np.linalg.cholesky(R)
            return mu, R
        except np.linalg.LinAlgError:
            continue
    raise SingularCovariance("host covariance is singular even after regularization")


def gaussian_log_density(X, mu, S) -> np.ndarray:
    L = np.linalg.cholesky(S)
    z = np.linalg.solve(L, (np.asarray(X, dtype=float) - mu).T)
    return -0.5 * np.sum(z**2, 0) - np.sum(np.log(np.diag(L))) - 0.5 * len(mu) * math.log(2 * math.pi)


BASELINES = ("sample_size", "cov_dist", "prop_score_error")


def baseline_scores(host: TabularDataset, candidates: list[TabularDataset]) -> dict[str, np.ndarray]:
    """Higher is better for every baseline.

    ``sample_size`` is the row count, ``cov_dist`` the mean log-density of
    candidate covariates under a Gaussian fit to the host, and
    ``prop_score_error`` the mean log-loss of a host propensity model on the
    candidate's treatment assignments.
    """
    mu, S = _gaussian_fit(host.X)
    prop = fit_logistic(host.X, host.t)
    return {
        "sample_size": np.array([c.n for c in candidates], dtype=float),
        "cov_dist": np.array([float(np.mean(gaussian_log_density(c.X, mu, S))) for c in candidates]),
        "prop_score_error": np.array([prop.log_loss(c.X, c.t) for c in candidates]),
    }


# -- ground truth -----------------------------------------------------------
@dataclass(frozen=True)
class GroundTruth:
    pehe: np.ndarray
    ranking: np.ndarray


def ground_truth_ranking(host: TabularDataset, truths: list[TabularDataset], cate_fit, holdout: TabularDataset) -> GroundTruth:
    """PEHE of a model refitted on each merge ``host + candidate``.

    ``cate_fit(train) -> callable(X) -> tau_hat`` refits from scratch.
    Lower PEHE ranks first.
    """
    from .bayes_linear import pehe

    values = np.array([pehe(cate_fit(host.concat(c))(holdout.X), holdout.tau) for c in truths])
    return GroundTruth(values, rank_from_scores(values, descending=False))
