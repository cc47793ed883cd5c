"""Iterative secure numerics: reciprocal, natural log and LDL log-determinant."""
from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError
from .fixed_point import decode
from .network import PartyNetwork
from .shares import (
    SharedValue,
    add_public,
    add_shared,
    broadcast,
    mul,
    mul_public,
    neg,
    public,
    reveal_ring,
    stack,
    sub_shared,
)

RECIPROCAL_DOMAIN = (2.0**-6, 2.0**6)
LOG_DOMAIN = (2.0**-6, 2.0**14)
RECIPROCAL_ITERS = 16
# LDL pivots use the scaled reciprocal 2^k / d, which keeps full relative
# precision for d up to 2^(6+k); this sets the pivot domain
PIVOT_SCALE_BITS = 8
PIVOT_DOMAIN = (RECIPROCAL_DOMAIN[0], RECIPROCAL_DOMAIN[1] * 2.0**PIVOT_SCALE_BITS)
LOG_ITERS = 12
_EXP_TERMS = 6
_EXP_SPLIT = 16


def _shadow_check(x: SharedValue, net: PartyNetwork, domain: tuple[float, float], name: str) -> None:
    # debug aid only: peeks at the plaintext without touching the transcript
    v = np.atleast_1d(decode(np.sum(x.shares, axis=0, dtype=np.uint64), x.cfg))
    lo, hi = domain
    if np.any(v < lo) or np.any(v > hi):
        raise DomainError(f"{name} input outside [{lo:g}, {hi:g}]")


def secure_reciprocal(
    x: SharedValue, net: PartyNetwork, iters: int | None = None, shadow: bool = False, scale_bits: int = 0
) -> SharedValue:
    """Newton-Raphson ``y <- y (2 - x y)`` from an affine seed.

    The seed ``3/(2h) - x/(2h^2)`` with ``h`` the domain upper bound keeps
    ``x y0`` in ``(0, 1]`` over the whole domain, so the iteration
    converges monotonically; the number of steps is set by the lower bound.

    With ``scale_bits = k`` the result is ``2^k / x`` and the upper bound
    of the domain grows by ``2^k``; small outputs then keep enough
    significant bits. ``k`` extra steps cover the wider domain.
    """
    lo, hi = RECIPROCAL_DOMAIN[0], RECIPROCAL_DOMAIN[1] * 2.0**scale_bits
    if shadow:
        _shadow_check(x, net, (lo, hi), "reciprocal")
    if iters is None:
        iters = (net.reciprocal_iters or RECIPROCAL_ITERS) + scale_bits
    s = 2.0**scale_bits
    y = add_public(mul_public(x, -s / (2 * hi * hi), net), 1.5 * s / hi)
    for _ in range(iters):
        xy = mul(x, y, net)
        if scale_bits:
            xy = mul_public(xy, 1.0 / s, net)
        y = mul(y, add_public(neg(xy), 2.0), net)
    return y


def secure_exp_small(z: SharedValue, net: PartyNetwork) -> SharedValue:
    """Horner-evaluated Taylor series of ``exp(z)``; accurate for ``|z| < 0.5``."""
    acc = public(np.ones(z.shape), net)
    for k in range(_EXP_TERMS, 0, -1):
        acc = add_public(mul(mul_public(z, 1.0 / k, net), acc, net), 1.0)
    return acc


def secure_log(x: SharedValue, net: PartyNetwork, iters: int | None = None, shadow: bool = False) -> SharedValue:
    """Order-2 Householder iterations for ``y = ln x``.

    Each step forms ``h = 1 - x exp(-y)`` and updates ``y <- y - h - h^2/2``.
    ``x exp(-y)`` is built as ``x`` multiplied by ``exp(-y/16)`` sixteen
    times, which keeps every intermediate between ``x`` and ``x exp(-y)`` so
    no fixed-point value underflows. The seed is the log of the domain upper
    bound; iterates then decrease monotonically to ``ln x``.
    """
    if shadow:
        _shadow_check(x, net, LOG_DOMAIN, "log")
    if iters is None:
        iters = net.log_iters or LOG_ITERS
    y = public(np.full(x.shape, math.log(LOG_DOMAIN[1])), net)
    for _ in range(iters):
        e = secure_exp_small(mul_public(y, -1.0 / _EXP_SPLIT, net), net)
        w = x
        for _ in range(_EXP_SPLIT):
            w = mul(w, e, net)
        h = add_public(neg(w), 1.0)
        hh = mul_public(mul(h, h, net), 0.5, net)
        y = sub_shared(y, add_shared(h, hh))
    return y


def secure_ldl(A: SharedValue, net: PartyNetwork, shadow: bool = False) -> SharedValue:
    """Square-root-free right-looking LDL^T on a shared matrix; returns pivots."""
    n = A.shape[0]
    S = A
    pivots = []
    for k in range(n):
        d = S[0, 0]
        pivots.append(d)
        if k == n - 1:
            break
        inv = secure_reciprocal(d, net, shadow=shadow, scale_bits=PIVOT_SCALE_BITS)
        col = S[1:, 0]
        l = mul_public(mul(col, broadcast(inv, col.shape), net), 2.0**-PIVOT_SCALE_BITS, net)
        r = n - k - 1
        outer = mul(broadcast(l.reshape(r, 1), (r, r)), broadcast(col.reshape(1, r), (r, r)), net)
        S = sub_shared(S[1:, 1:], outer)
    return stack(pivots)


def secure_ldl_logdet(A: SharedValue, net: PartyNetwork, shadow: bool = False) -> SharedValue:
    """``log det A`` as the sum of secure logs of the LDL pivots."""
    if A.shape[0] == 0:
        return public(0.0, net)
    D = secure_ldl(A, net, shadow=shadow)
    logs = secure_log(D, net, shadow=shadow)
    total = logs.shares.sum(axis=1, dtype=np.uint64)
    return SharedValue(total, A.cfg)


def open_pivots(A: SharedValue, net: PartyNetwork) -> np.ndarray:
    """Diagnostic: reveal the secure pivots (leaks them; tests only)."""
    return decode(reveal_ring(secure_ldl(A, net), net), net.cfg)
