"""Sampler-based EIG estimators: nested MC, Rao-Blackwellised and CATE-targeted.

All estimators take a :class:`PosteriorSampler`, so any model exposing
posterior draws and a normal likelihood with known variance plugs in. The
exact conjugate-linear sampler is the shipped implementation.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .bayes_linear import FeatureMap, GaussianPosterior
from .dataset import TabularDataset
from .errors import ConditionalSamplerUnsupported, ConfigError, NonFiniteLikelihood, SamplerFailure
from .linalg import ldl_decompose

_CHUNK_FLOATS = 4_000_000


@dataclass(frozen=True)
class NmcConfig:
    N: int = 400
    M1: int = 800
    M2: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.M1 < 1 or (self.M2 is not None and self.M2 < 1):
            raise ConfigError("N, M1 and M2 must be at least 1")

    @property
    def m2(self) -> int:
        return self.M1 if self.M2 is None else self.M2


@dataclass(frozen=True)
class EigEstimate:
    value: float
    standard_error: float
    config: dict = field(default_factory=dict)


class PosteriorSampler:
    """Interface for posterior draws and the normal likelihood of a model.

    ``prepare`` turns a candidate into whatever the likelihood needs; the
    remaining methods are batched: ``theta`` has shape ``(B, K, p)`` and
    ``y`` has shape ``(B, n_e)``.
    """

    sigma2: float
    nc_index: np.ndarray
    c_index: np.ndarray

    @property
    def p(self) -> int:
        return len(self.nc_index) + len(self.c_index)

    def prepare(self, candidate: TabularDataset):
        raise NotImplementedError

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def draw_nc_given_c(self, theta_c: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        raise ConditionalSamplerUnsupported(f"{type(self).__name__} has no conditional sampler")

    def simulate(self, ctx, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_lik(self, ctx, y: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class _LinearContext:
    Phi: np.ndarray
    G: np.ndarray
    n: int


class ConjugateLinearSampler(PosteriorSampler):
    """Exact draws from a :class:`GaussianPosterior` of the linear model."""

    def __init__(self, post: GaussianPosterior, fm: FeatureMap):
        self.post, self.fm = post, fm
        self.sigma2 = post.sigma2
        self.nc_index = np.arange(fm.p_nc)
        self.c_index = np.arange(fm.p_nc, fm.p)
        cov = post.covariance
        self._chol = _psd_cholesky(cov)
        nc, c = self.nc_index, self.c_index
        P = post.precision
        if len(nc):
            P_nn = P[np.ix_(nc, nc)]
            self._cond_gain = -np.linalg.solve(P_nn, P[np.ix_(nc, c)])
            self._cond_chol = _psd_cholesky(self.sigma2 * np.linalg.inv(P_nn))

    def prepare(self, candidate: TabularDataset) -> _LinearContext:
        Phi = self.fm.design(candidate.X, candidate.t)
        return _LinearContext(Phi, Phi.T @ Phi, candidate.n)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, len(self.post.mean)))
        return self.post.mean + z @ self._chol.T

    def draw_nc_given_c(self, theta_c: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        """``k`` draws of ``theta_nc | theta_c`` per row of ``theta_c``; shape ``(B, k, p_nc)``."""
        B = theta_c.shape[0]
        mu = self.post.mean
        if not len(self.nc_index):
            return np.zeros((B, k, 0))
        cond_mean = mu[self.nc_index] + (theta_c - mu[self.c_index]) @ self._cond_gain.T
        z = rng.standard_normal((B, k, len(self.nc_index)))
        return cond_mean[:, None, :] + z @ self._cond_chol.T

    def simulate(self, ctx: _LinearContext, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((theta.shape[0], ctx.n)) * math.sqrt(self.sigma2)
        return theta @ ctx.Phi.T + noise

    def log_lik(self, ctx: _LinearContext, y: np.ndarray, theta: np.ndarray) -> np.ndarray:
        # ||y - Phi th||^2 = y.y - 2 (Phi^T y).th + th^T G th, O(p^2) per pair
        yy = np.einsum("bn,bn->b", y, y)
        b = y @ ctx.Phi
        quad = np.sum((theta @ ctx.G) * theta, axis=-1)
        cross = np.matmul(theta, b[:, :, None])[..., 0]
        sq = yy[:, None] - 2 * cross + quad
        return -0.5 * ctx.n * math.log(2 * math.pi * self.sigma2) - 0.5 * sq / self.sigma2


def _psd_cholesky(S: np.ndarray) -> np.ndarray:
    """Lower factor ``C`` with ``C C^T = S`` via LDL (tolerates zero pivots)."""
    if S.shape[0] == 0:
        return S
    f = ldl_decompose(0.5 * (S + S.T))
    return f.L * np.sqrt(np.maximum(f.D, 0.0))


def conjugate_linear_sampler(post: GaussianPosterior, fm: FeatureMap) -> ConjugateLinearSampler:
    return ConjugateLinearSampler(post, fm)


def _streams(seed: int, k: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def _chunks(N: int, per_row: int):
    step = max(1, _CHUNK_FLOATS // max(per_row, 1))
    for lo in range(0, N, step):
        yield slice(lo, min(N, lo + step))


def _finish(terms: np.ndarray, cfg: NmcConfig, name: str) -> EigEstimate:
    if not np.all(np.isfinite(terms)):
        raise NonFiniteLikelihood(f"{name}: non-finite log-likelihood terms")
    N = len(terms)
    se = float(terms.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    return EigEstimate(float(terms.mean()), se, {"estimator": name, **asdict(cfg)})


def _check_draws(theta: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(theta)):
        raise SamplerFailure("sampler returned non-finite draws")
    return theta


def _pooled_terms(sampler: PosteriorSampler, candidate: TabularDataset, cfg: NmcConfig):
    """Shared body of the plain and Rao-Blackwellised estimators.

    One pool of ``N * M1`` posterior draws is split into ``N`` groups of
    ``M1``; the first member of group ``i`` is the outer draw that generates
    ``y_i`` and the whole group forms the inner marginal average.
    """
    pool_rng, y_rng = _streams(cfg.seed, 2)
    ctx = sampler.prepare(candidate)
    pool = _check_draws(sampler.draw(cfg.N * cfg.M1, pool_rng)).reshape(cfg.N, cfg.M1, -1)
    y = sampler.simulate(ctx, pool[:, 0, :], y_rng)
    log_own = np.empty(cfg.N)
    log_marg = np.empty(cfg.N)
    for sl in _chunks(cfg.N, cfg.M1 * sampler.p):
        ll = sampler.log_lik(ctx, y[sl], pool[sl])
        log_own[sl] = ll[:, 0]
        log_marg[sl] = logsumexp(ll, axis=1) - math.log(cfg.M1)
    return log_own, log_marg


def eig_nmc(sampler: PosteriorSampler, candidate: TabularDataset, cfg: NmcConfig) -> EigEstimate:
    if candidate.n == 0:
        return EigEstimate(0.0, 0.0, {"estimator": "nmc", **asdict(cfg)})
    log_own, log_marg = _pooled_terms(sampler, candidate, cfg)
    with np.errstate(invalid="ignore"):
        terms = log_own - log_marg
    return _finish(terms, cfg, "nmc")


def eig_rb(sampler: PosteriorSampler, candidate: TabularDataset, cfg: NmcConfig) -> EigEstimate:
    """Replaces the sampled log-likelihood with the analytic Gaussian entropy."""
    if candidate.n == 0:
        return EigEstimate(0.0, 0.0, {"estimator": "rb", **asdict(cfg)})
    _, log_marg = _pooled_terms(sampler, candidate, cfg)
    ent = 0.5 * candidate.n * (1 + math.log(2 * math.pi * sampler.sigma2))
    return _finish(-log_marg - ent, cfg, "rb")


def eig_theta_c_nmc(sampler: PosteriorSampler, candidate: TabularDataset, cfg: NmcConfig) -> EigEstimate:
    """Double-nested estimator of the information about ``theta_c`` only.

    Numerator: ``M2`` draws of ``theta_nc | theta_c^(i)``. Denominator:
    ``M1`` fresh marginal draws per outer sample.
    """
    if candidate.n == 0:
        return EigEstimate(0.0, 0.0, {"estimator": "nmc_cate", **asdict(cfg)})
    outer_rng, y_rng, marg_rng, cond_rng = _streams(cfg.seed, 4)
    ctx = sampler.prepare(candidate)
    theta = _check_draws(sampler.draw(cfg.N, outer_rng))
    y = sampler.simulate(ctx, theta, y_rng)
    nc, c = sampler.nc_index, sampler.c_index
    terms = np.empty(cfg.N)
    M2 = cfg.m2
    for sl in _chunks(cfg.N, (cfg.M1 + M2) * sampler.p):
        B = sl.stop - sl.start
        marg = _check_draws(sampler.draw(B * cfg.M1, marg_rng)).reshape(B, cfg.M1, -1)
        cond = np.empty((B, M2, sampler.p))
        cond[:, :, c] = theta[sl][:, None, c]
        cond[:, :, nc] = sampler.draw_nc_given_c(theta[sl][:, c], M2, cond_rng)
        num = logsumexp(sampler.log_lik(ctx, y[sl], cond), axis=1) - math.log(M2)
        den = logsumexp(sampler.log_lik(ctx, y[sl], marg), axis=1) - math.log(cfg.M1)
        terms[sl] = num - den
    return _finish(terms, cfg, "nmc_cate")


@dataclass(frozen=True)
class ProbeRow:
    N: int
    M1: int
    rmse: float
    bias: float
    reps: int


def convergence_probe(
    sampler: PosteriorSampler,
    candidate: TabularDataset,
    truth: float,
    N_grid,
    M1_grid,
    reps: int = 10,
    estimator: str = "nmc",
    seed: int = 0,
) -> tuple[list[ProbeRow], dict]:
    """RMSE against a closed-form truth over an ``N x M1`` grid.

    Returns the table and the fitted log-log slopes of RMSE against ``N``
    (per ``M1``) and against ``M1`` (per ``N``).
    """
    fn = {"nmc": eig_nmc, "rb": eig_rb, "nmc_cate": eig_theta_c_nmc}[estimator]
    rows = []
    for N in N_grid:
        for M1 in M1_grid:
            errs = np.array(
                [fn(sampler, candidate, NmcConfig(N, M1, seed=seed * 100_003 + r)).value - truth for r in range(reps)]
            )
            rows.append(ProbeRow(N, M1, float(np.sqrt(np.mean(errs**2))), float(errs.mean()), reps))
    slopes = {"N": {}, "M1": {}}
    for M1 in M1_grid:
        sub = [r for r in rows if r.M1 == M1]
        if len(sub) > 1:
            slopes["N"][M1] = float(np.polyfit(np.log([r.N for r in sub]), np.log([r.rmse for r in sub]), 1)[0])
    for N in N_grid:
        sub = [r for r in rows if r.N == N]
        if len(sub) > 1:
            slopes["M1"][N] = float(np.polyfit(np.log([r.M1 for r in sub]), np.log([r.rmse for r in sub]), 1)[0])
    return rows, slopes
