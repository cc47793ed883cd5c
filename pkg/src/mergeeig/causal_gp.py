"""Causal multitask Gaussian process with a two-arm coregionalization kernel.

``f = (f_0, f_1)`` has matrix kernel ``K(x, x') = A0 k0(x, x') + A1 k1(x, x')``
with RBF ``k_t``; arm ``t`` outcomes are ``f_t(x) + N(0, sigma_t^2)`` and the
CATE is ``tau(x) = f_1(x) - f_0(x)``. The EIGs are computed from the joint
Gaussian of candidate outcomes and ``tau`` at the host covariates under the
host-conditioned (posterior) kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .dataset import TabularDataset
from .errors import ConfigError, DimensionMismatch, EmptyArm, MissingOutcomes, NotPSD
from .linalg import LdlFactors, ldl_decompose, log_det_psd

JITTER = 1e-8


@dataclass(frozen=True)
class LmcKernelParams:
    """``A0, A1`` are 2x2 PSD, ``R0, R1`` per-dimension squared lengthscales."""

    A0: np.ndarray
    A1: np.ndarray
    R0: np.ndarray
    R1: np.ndarray
    sigma0_sq: float
    sigma1_sq: float

    def __post_init__(self):
        for name in ("A0", "A1"):
            A = np.asarray(getattr(self, name), dtype=float)
            if A.shape != (2, 2) or np.max(np.abs(A - A.T)) > 1e-12 or np.linalg.eigvalsh(A)[0] < -1e-12:
                raise ConfigError(f"{name} must be a symmetric PSD 2x2 matrix")
            object.__setattr__(self, name, A)
        for name in ("R0", "R1"):
            R = np.asarray(getattr(self, name), dtype=float).ravel()
            if R.size == 0 or np.any(R <= 0):
                raise ConfigError(f"{name} lengthscales must be positive")
            object.__setattr__(self, name, R)
        if self.R0.shape != self.R1.shape:
            raise ConfigError("R0 and R1 must have the same length")
        if not (self.sigma0_sq > 0 and self.sigma1_sq > 0):
            raise ConfigError("noise variances must be positive")

    @property
    def d(self) -> int:
        return self.R0.shape[0]

    @property
    def noise(self) -> np.ndarray:
        return np.array([self.sigma0_sq, self.sigma1_sq])

    @classmethod
    def default(cls, d: int, amplitude: float = 1.0, lengthscale_sq: float = 1.0, noise: float = 0.1) -> "LmcKernelParams":
        A0 = amplitude * np.array([[1.0, 0.5], [0.5, 1.0]])
        A1 = amplitude * np.array([[0.5, 0.0], [0.0, 0.5]])
        R = np.full(d, lengthscale_sq)
        return cls(A0, A1, R, R.copy(), noise, noise)

    # unconstrained coordinates for the optimizer: Cholesky entries of A0,
    # A1 (log diagonal), log R0, log R1, log noise
    def to_vector(self) -> np.ndarray:
        parts = []
        for A in (self.A0, self.A1):
            L = np.linalg.cholesky(A + 1e-12 * np.eye(2))
            parts.append([math.log(L[0, 0]), L[1, 0], math.log(max(L[1, 1], 1e-12))])
        parts += [np.log(self.R0), np.log(self.R1), [math.log(self.sigma0_sq), math.log(self.sigma1_sq)]]
        return np.concatenate([np.ravel(p) for p in parts])

    @classmethod
    def from_vector(cls, v: np.ndarray, d: int) -> "LmcKernelParams":
        def A(a, b, c):
            L = np.array([[math.exp(a), 0.0], [b, math.exp(c)]])
            M = L @ L.T
            return 0.5 * (M + M.T)

        return cls(
            A(*v[0:3]),
            A(*v[3:6]),
            np.exp(v[6 : 6 + d]),
            np.exp(v[6 + d : 6 + 2 * d]),
            math.exp(v[6 + 2 * d]),
            math.exp(v[7 + 2 * d]),
        )


def _rbf(X: np.ndarray, Y: np.ndarray, R: np.ndarray) -> np.ndarray:
    Xs, Ys = X / np.sqrt(R), Y / np.sqrt(R)
    sq = np.sum(Xs**2, 1)[:, None] + np.sum(Ys**2, 1)[None, :] - 2 * Xs @ Ys.T
    return np.exp(-0.5 * np.maximum(sq, 0.0))


def _check_dim(params: LmcKernelParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] and X.shape[1] != params.d:
        raise DimensionMismatch(f"expected {params.d} covariates, got {X.shape[1]}")
    return X


def kernel_eval(params: LmcKernelParams, x, x_prime) -> np.ndarray:
    """2x2 matrix ``K(x, x')``."""
    x, xp = _check_dim(params, x), _check_dim(params, x_prime)
    k0 = _rbf(x, xp, params.R0)[0, 0]
    k1 = _rbf(x, xp, params.R1)[0, 0]
    return params.A0 * k0 + params.A1 * k1


def arm_kernel(params: LmcKernelParams, X, tx, Y, ty) -> np.ndarray:
    """Scalar kernel between labelled points, ``K(x_i, y_j)[tx_i, ty_j]``."""
    X, Y = _check_dim(params, X), _check_dim(params, Y)
    tx, ty = np.asarray(tx, dtype=int), np.asarray(ty, dtype=int)
    k0, k1 = _rbf(X, Y, params.R0), _rbf(X, Y, params.R1)
    return params.A0[tx[:, None], ty[None, :]] * k0 + params.A1[tx[:, None], ty[None, :]] * k1


def _arm_order(data: TabularDataset) -> np.ndarray:
    # untreated rows first, then treated, each in original order
    return np.concatenate([np.flatnonzero(data.t == 0), np.flatnonzero(data.t == 1)])


def _jittered(K: np.ndarray) -> np.ndarray:
    if K.shape[0] == 0:
        return K
    return K + JITTER * max(float(np.mean(np.diag(K))), 1e-300) * np.eye(K.shape[0])


@dataclass(frozen=True)
class GpPosteriorState:
    """Host data in arm order and the LDL factors of ``K + Sigma`` on it."""

    params: LmcKernelParams
    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    y_offset: float
    factors: LdlFactors
    alpha: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def _whitened_cross(self, Z, tz) -> np.ndarray:
        Kxz = arm_kernel(self.params, self.X, self.t, Z, tz)
        return solve_triangular(self.factors.L, Kxz, lower=True, unit_diagonal=True)

    def posterior_cov(self, Z, tz, Z2=None, tz2=None) -> np.ndarray:
        """Posterior kernel between labelled point sets."""
        B1 = self._whitened_cross(Z, tz)
        if Z2 is None:
            Z2, tz2, B2 = Z, tz, B1
        else:
            B2 = self._whitened_cross(Z2, tz2)
        prior = arm_kernel(self.params, Z, tz, Z2, tz2)
        return prior - B1.T @ (B2 / self.factors.D[:, None])

    def predict_arm(self, Z, tz) -> np.ndarray:
        return self.y_offset + arm_kernel(self.params, Z, tz, self.X, self.t) @ self.alpha

    def predict_cate(self, Z) -> np.ndarray:
        Z = _check_dim(self.params, Z)
        ones, zeros = np.ones(Z.shape[0]), np.zeros(Z.shape[0])
        diff = arm_kernel(self.params, Z, ones, self.X, self.t) - arm_kernel(self.params, Z, zeros, self.X, self.t)
        return diff @ self.alpha


def _train_matrix(params: LmcKernelParams, X: np.ndarray, t: np.ndarray) -> np.ndarray:
    K = arm_kernel(params, X, t, X, t)
    return _jittered(K) + np.diag(params.noise[t.astype(int)])


def log_marginal_likelihood(params: LmcKernelParams, X: np.ndarray, t: np.ndarray, y: np.ndarray) -> float:
    try:
        c, low = cho_factor(_train_matrix(params, X, t), lower=True)
    except np.linalg.LinAlgError:
        return -math.inf
    alpha = cho_solve((c, low), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(c))) - 0.5 * len(y) * math.log(2 * math.pi))


def _host_arrays(host: TabularDataset):
    if host.y is None:
        raise MissingOutcomes("GP fitting needs host outcomes")
    if host.n_treated == 0 or host.n_control == 0:
        raise EmptyArm("host must contain both treated and untreated rows")
    order = _arm_order(host)
    y = host.y[order]
    offset = float(y.mean())
    return host.X[order], host.t[order], y - offset, offset


def condition(params: LmcKernelParams, host: TabularDataset) -> GpPosteriorState:
    """Posterior state for fixed hyperparameters."""
    X, t, y, offset = _host_arrays(host)
    _check_dim(params, X)
    f = ldl_decompose(_train_matrix(params, X, t))
    if np.any(f.D <= 0):
        raise NotPSD("kernel matrix plus noise is not positive definite")
    z = solve_triangular(f.L, y, lower=True, unit_diagonal=True) / f.D
    alpha = solve_triangular(f.L.T, z, lower=False, unit_diagonal=True)
    return GpPosteriorState(params, X, t, y, offset, f, alpha)


def fit_host(
    params_init: LmcKernelParams,
    host: TabularDataset,
    max_iters: int = 1000,
    restarts: int = 2,
    seed: int = 0,
    step: float = 0.5,
    min_step: float = 1e-3,
) -> tuple[LmcKernelParams, GpPosteriorState]:
    """Coordinate-wise ascent on the log marginal likelihood.

    Each iteration tries one coordinate at ``+step`` and ``-step`` and keeps
    an improving move, otherwise halves that coordinate's step. Restarts
    beyond the first begin from a perturbed initial vector; the best
    accepted point over all restarts is returned. ``max_iters=0`` returns
    ``params_init`` unchanged.
    """
    X, t, y, _ = _host_arrays(host)
    if max_iters <= 0:
        return params_init, condition(params_init, host)
    d = params_init.d
    rng = np.random.default_rng([seed, 0x6B])

    def objective(v):
        try:
            return log_marginal_likelihood(LmcKernelParams.from_vector(v, d), X, t, y)
        except (ConfigError, OverflowError):
            return -math.inf

    v0 = params_init.to_vector()
    best_v, best_f = v0, objective(v0)
    for r in range(max(restarts, 1)):
        v = v0 if r == 0 else v0 + rng.normal(0.0, 0.5, v0.shape)
        fv = objective(v)
        steps = np.full(v.shape, step)
        for it in range(max_iters):
            if np.all(steps < min_step):
                break
            j = it % len(v)
            if steps[j] < min_step:
                continue
            moved = False
            for sgn in (1.0, -1.0):
                w = v.copy()
                w[j] += sgn * steps[j]
                fw = objective(w)
                if fw > fv:
                    v, fv, moved = w, fw, True
                    break
            if not moved:
                steps[j] *= 0.5
        if fv > best_f:
            best_v, best_f = v, fv
    params = params_init if best_v is v0 else LmcKernelParams.from_vector(best_v, d)
    return params, condition(params, host)


@dataclass(frozen=True)
class SigmaBlocks:
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma12: np.ndarray
    sigma: np.ndarray
    n_arm: tuple[int, int]


def build_sigma_blocks(state: GpPosteriorState, candidate: TabularDataset, X0=None) -> SigmaBlocks:
    """Joint covariance of candidate outcomes (untreated first) and
    ``tau`` at the reference covariates ``X0`` (the host rows by default)."""
    X0 = state.X if X0 is None else _check_dim(state.params, X0)
    order = _arm_order(candidate)
    Xe, te = candidate.X[order], candidate.t[order].astype(int)
    if candidate.n:
        _check_dim(state.params, Xe)
    m = X0.shape[0]
    ones, zeros = np.ones(m, dtype=int), np.zeros(m, dtype=int)
    # labelled evaluation set: candidate rows, then f_1 and f_0 at X0
    Z = np.vstack([Xe.reshape(-1, state.params.d), X0, X0])
    tz = np.concatenate([te, ones, zeros])
    C = state.posterior_cov(Z, tz)
    C = 0.5 * (C + C.T)
    ne = candidate.n
    e, a1, a0 = slice(0, ne), slice(ne, ne + m), slice(ne + m, ne + 2 * m)
    sigma1 = _jittered(C[e, e]) + np.diag(state.params.noise[te])
    sigma12 = C[e, a1] - C[e, a0]
    sigma2 = _jittered(C[a1, a1] + C[a0, a0] - C[a1, a0] - C[a0, a1])
    sigma = np.block([[sigma1, sigma12], [sigma12.T, sigma2]])
    return SigmaBlocks(sigma1, sigma2, sigma12, sigma, (int(np.sum(te == 0)), int(np.sum(te == 1))))


def eig_f(state: GpPosteriorState, candidate: TabularDataset) -> float:
    """``0.5 log det Sigma1 - 0.5 sum_t n_t log sigma_t^2``."""
    if candidate.n == 0:
        return 0.0
    blocks = build_sigma_blocks(state, candidate, X0=np.zeros((0, state.params.d)))
    n0, n1 = blocks.n_arm
    noise = n0 * math.log(state.params.sigma0_sq) + n1 * math.log(state.params.sigma1_sq)
    return max(0.5 * (log_det_psd(blocks.sigma1) - noise), 0.0)


def eig_tau_x0(state: GpPosteriorState, candidate: TabularDataset, X0=None) -> float:
    """Mutual information ``0.5 log(det Sigma1 det Sigma2 / det Sigma)``.

    Evaluated as ``0.5 [log det Sigma1 - log det(Sigma1 - Sigma12 Sigma2^-1 Sigma12^T)]``,
    the same quantity through the Schur complement of ``Sigma2``.
    """
    if candidate.n == 0:
        return 0.0
    b = build_sigma_blocks(state, candidate, X0)
    if not np.any(b.sigma12):
        return 0.0
    f = ldl_decompose(b.sigma2)
    if np.any(f.D <= 0):
        raise NotPSD("tau covariance is not positive definite after jitter")
    W = solve_triangular(f.L, b.sigma12.T, lower=True, unit_diagonal=True)
    cond = b.sigma1 - W.T @ (W / f.D[:, None])
    return max(0.5 * (log_det_psd(b.sigma1) - log_det_psd(0.5 * (cond + cond.T))), 0.0)
