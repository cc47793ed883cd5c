"""Conjugate Bayesian polynomial regression for CATE with closed-form EIGs.

The outcome model is ``y = phi(x, t) theta + noise`` with
``phi(x, t) = [phi_nc(x), t * phi_c(x)]``, so the CATE is ``phi_c(x) theta_c``.
Prior ``theta ~ N(mu0, sigma2 Lambda0^-1)`` and noise variance ``sigma2``.
Precisions are stored in units of ``1 / sigma2`` so the EIGs do not depend
on ``sigma2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import TabularDataset
from .errors import ConfigError, DimensionMismatch, MissingOutcomes, MissingTrueCate
from .linalg import gram, ldl_decompose, log_det_psd, solve_psd


@dataclass(frozen=True)
class Term:
    """Monomial ``prod_j x[vars[j]] ** powers[j]``; no vars means the constant 1."""

    block: str
    vars: tuple[int, ...] = ()
    powers: tuple[int, ...] = ()

    def __post_init__(self):
        if self.block not in ("nc", "c"):
            raise ConfigError(f"term block must be 'nc' or 'c', got {self.block!r}")
        vars_, powers = tuple(int(v) for v in self.vars), tuple(int(p) for p in self.powers)
        if not powers:
            powers = (1,) * len(vars_)
        if len(powers) != len(vars_) or any(p < 1 for p in powers):
            raise ConfigError("term powers must be positive and match vars")
        object.__setattr__(self, "vars", vars_)
        object.__setattr__(self, "powers", powers)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        out = np.ones(X.shape[0])
        for v, p in zip(self.vars, self.powers):
            out = out * X[:, v] ** p
        return out

    def name(self) -> str:
        if not self.vars:
            return "1"
        return "*".join(f"x{v}" if p == 1 else f"x{v}^{p}" for v, p in zip(self.vars, self.powers))


@dataclass(frozen=True)
class FeatureMap:
    nc_terms: tuple[Term, ...]
    c_terms: tuple[Term, ...]
    d: int

    @property
    def p_nc(self) -> int:
        return len(self.nc_terms)

    @property
    def p_c(self) -> int:
        return len(self.c_terms)

    @property
    def p(self) -> int:
        return self.p_nc + self.p_c

    @property
    def c_slice(self) -> slice:
        return slice(self.p_nc, self.p)

    @property
    def nc_slice(self) -> slice:
        return slice(0, self.p_nc)

    @classmethod
    def polynomial(cls, d: int, degree: int = 1, nc_intercept: bool = True) -> "FeatureMap":
        """Intercept, treatment, covariate powers up to ``degree``, and their
        treatment interactions. ``degree=1`` gives the X, T, X*T design."""
        base = [Term("nc")] if nc_intercept else []
        powers = [(j, k) for k in range(1, degree + 1) for j in range(d)]
        nc = base + [Term("nc", (j,), (k,)) for j, k in powers]
        c = [Term("c")] + [Term("c", (j,), (k,)) for j, k in powers]
        return cls(tuple(nc), tuple(c), d)

    @classmethod
    def from_descriptors(cls, terms: Sequence[dict], d: int) -> "FeatureMap":
        built = [Term(t["block"], tuple(t.get("vars", ())), tuple(t.get("powers", ()))) for t in terms]
        for term in built:
            if any(v < 0 or v >= d for v in term.vars):
                raise ConfigError(f"term {term.name()} refers to a missing covariate")
        return cls(
            tuple(t for t in built if t.block == "nc"),
            tuple(t for t in built if t.block == "c"),
            d,
        )

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[0] and X.shape[1] != self.d:
            raise DimensionMismatch(f"expected {self.d} covariates, got {X.shape[1]}")
        return X

    def phi_nc(self, X) -> np.ndarray:
        X = self._check(X)
        return np.column_stack([t.evaluate(X) for t in self.nc_terms]) if self.nc_terms else np.zeros((X.shape[0], 0))

    def phi_c(self, X) -> np.ndarray:
        X = self._check(X)
        return np.column_stack([t.evaluate(X) for t in self.c_terms]) if self.c_terms else np.zeros((X.shape[0], 0))

    def design(self, X, t) -> np.ndarray:
        """Rows ``[phi_nc(x), t * phi_c(x)]``."""
        X = self._check(X)
        t = np.asarray(t, dtype=float).reshape(-1)
        if t.shape[0] != X.shape[0]:
            raise DimensionMismatch("treatment length does not match rows")
        return np.hstack([self.phi_nc(X), t[:, None] * self.phi_c(X)])

    def treated_c_block(self, X, t) -> np.ndarray:
        return self.design(X, t)[:, self.c_slice]


def features(fm: FeatureMap, x, t) -> np.ndarray:
    return fm.design(np.asarray(x, dtype=float).reshape(1, -1), [t])[0]


@dataclass(frozen=True)
class GaussianPosterior:
    """``theta ~ N(mean, sigma2 * precision^-1)``; ``n_obs`` counts absorbed rows."""

    mean: np.ndarray
    precision: np.ndarray
    sigma2: float = 1.0
    n_obs: int = 0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "precision", np.asarray(self.precision, dtype=float))

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma2 * solve_psd(self.precision, np.eye(len(self.mean)))


def conjugate_prior(fm: FeatureMap, sigma2: float = 1.0, precision: float = 1.0, mu0=None) -> GaussianPosterior:
    """``N(mu0, sigma2 / precision * I)`` prior; defaults are unit precisions and a zero mean."""
    mean = np.zeros(fm.p) if mu0 is None else np.asarray(mu0, dtype=float)
    return GaussianPosterior(mean, precision * np.eye(fm.p), sigma2)


def posterior_update(post: GaussianPosterior, fm: FeatureMap, data: TabularDataset) -> GaussianPosterior:
    if data.n == 0:
        return post
    if data.y is None:
        raise MissingOutcomes("posterior update needs outcomes")
    Phi = fm.design(data.X, data.t)
    precision = post.precision + gram(Phi)
    rhs = post.precision @ post.mean + Phi.T @ data.y
    mean = solve_psd(precision, rhs)
    return replace(post, mean=mean, precision=precision, n_obs=post.n_obs + data.n)


def fit(fm: FeatureMap, data: TabularDataset, sigma2: float = 1.0, prior_precision: float = 1.0) -> GaussianPosterior:
    return posterior_update(conjugate_prior(fm, sigma2, prior_precision), fm, data)


def _half_logdet_ratio(P: np.ndarray, G: np.ndarray) -> float:
    if P.shape[0] == 0:
        return 0.0
    return 0.5 * (log_det_psd(P + G) - log_det_psd(P))


def eig_theta(post: GaussianPosterior, fm: FeatureMap, candidate: TabularDataset) -> float:
    """``0.5 [log det(P + Phi_e^T Phi_e) - log det P]`` with ``P`` the current precision."""
    if candidate.n == 0:
        return 0.0
    return _half_logdet_ratio(post.precision, gram(fm.design(candidate.X, candidate.t)))


def eig_theta_c_block(post: GaussianPosterior, fm: FeatureMap, candidate: TabularDataset) -> float:
    """c-block formula using only the treated rows' ``t * phi_c`` Gram."""
    if candidate.n == 0 or fm.p_c == 0:
        return 0.0
    c = fm.c_slice
    Gc = gram(fm.treated_c_block(candidate.X, candidate.t))
    return _half_logdet_ratio(post.precision[c, c], Gc)


# contract name used by configs and reports
eig_theta_c_paper = eig_theta_c_block


def _log_det_marginal_c_precision(P: np.ndarray, fm: FeatureMap) -> float:
    # log det of the Schur complement P_cc - P_cn P_nn^-1 P_nc, the precision
    # of the theta_c marginal
    nc = fm.nc_slice
    logdet_nn = log_det_psd(P[nc, nc]) if fm.p_nc else 0.0
    return log_det_psd(P) - logdet_nn


def eig_theta_c_exact(post: GaussianPosterior, fm: FeatureMap, candidate: TabularDataset) -> float:
    """Entropy drop of the exact ``theta_c`` marginal (nuisance integrated out)."""
    if candidate.n == 0 or fm.p_c == 0:
        return 0.0
    P = post.precision
    P_new = P + gram(fm.design(candidate.X, candidate.t))
    return 0.5 * (_log_det_marginal_c_precision(P_new, fm) - _log_det_marginal_c_precision(P, fm))


def cate_predict(post: GaussianPosterior, fm: FeatureMap, X) -> np.ndarray:
    return fm.phi_c(X) @ post.mean[fm.c_slice]


def pehe(tau_hat, tau_true, root: bool = False) -> float:
    """Mean squared CATE error; ``root=True`` gives its square root."""
    if tau_true is None:
        raise MissingTrueCate("PEHE needs true CATE values")
    tau_hat, tau_true = np.asarray(tau_hat, dtype=float), np.asarray(tau_true, dtype=float)
    if tau_hat.shape != tau_true.shape:
        raise DimensionMismatch("prediction and truth lengths differ")
    v = float(np.mean((tau_hat - tau_true) ** 2))
    return math.sqrt(v) if root else v


# -- secure evaluation ---------------------------------------------------
def whitening(P: np.ndarray) -> np.ndarray:
    """``W`` with ``W P W^T = I`` from the LDL factors, computed by the host."""
    f = ldl_decompose(P)
    Linv = solve_triangular(f.L, np.eye(len(f.D)), lower=True, unit_diagonal=True)
    return Linv / np.sqrt(f.D)[:, None]


def secure_prescale(n_candidate: int, n_host: int) -> float:
    """Public power-of-two factor keeping LDL pivots inside the secure domains."""
    k = round(math.log2(1.0 + n_candidate / (n_host + 1.0)))
    return 2.0 ** -max(k, 0)


def eig_theta_shared(
    post: GaussianPosterior,
    fm: FeatureMap,
    candidate: TabularDataset,
    net,
    target: str = "full",
    host: int = 0,
    site: int = 1,
    scale: float | None = None,
):
    """Secure evaluation of :func:`eig_theta` (``target="full"``) or
    :func:`eig_theta_c_block` (``target="c"``).

    The host shares a whitening ``W`` of its precision, the candidate shares
    its design rows. With ``U = Phi_e W^T`` the statistic is
    ``0.5 log det(I + U^T U)``, so the secure log-determinant sees a matrix
    with pivots at least one. A public factor ``s`` multiplies that matrix
    before factorization and ``p log s`` is removed afterwards.
    """
    from .mpc import shares as sh
    from .mpc.functions import secure_ldl_logdet

    if target == "full":
        P, Phi = post.precision, fm.design(candidate.X, candidate.t)
    elif target == "c":
        c = fm.c_slice
        P, Phi = post.precision[c, c], fm.treated_c_block(candidate.X, candidate.t)
    else:
        raise ConfigError(f"unknown target {target!r}")
    p = P.shape[0]
    if candidate.n == 0 or p == 0:
        return sh.public(0.0, net)
    s = secure_prescale(candidate.n, post.n_obs) if scale is None else scale
    W = math.sqrt(s) * whitening(P)
    W_sh = sh.share_real(W.T, net, owner=host)
    Phi_sh = sh.share_real(Phi, net, owner=site % net.parties)
    U = sh.matmul(Phi_sh, W_sh, net)
    M = sh.add_public(sh.matmul(U.T, U, net), s * np.eye(p))
    logdet = secure_ldl_logdet(M, net)
    return sh.mul_public(sh.add_public(logdet, -p * math.log(s)), 0.5, net)
