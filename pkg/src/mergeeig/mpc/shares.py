"""Additive secret sharing over Z/QZ with Beaver-triple multiplication.

A :class:`SharedValue` holds an ``(m, *shape)`` array of ring words, one slice
per party, so scalars and matrices share one code path. Party ``i`` only ever
touches ``shares[i]`` except inside the explicit exchange rounds of
:class:`~mergeeig.mpc.network.PartyNetwork`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ConfigMismatch, TripleReused
from .fixed_point import RING, FixedPointConfig, decode, encode, from_signed, to_signed, wrap
from .network import PartyNetwork

# bounded mask used by dealer-assisted truncation (m > 2)
_TRUNC_MASK_BITS = 62


def _random_ring(rng: np.random.Generator, cfg: FixedPointConfig, shape) -> np.ndarray:
    return wrap(cfg, rng.integers(0, 1 << 64, size=shape, dtype=np.uint64, endpoint=False))


def _split(rng: np.random.Generator, cfg: FixedPointConfig, value: np.ndarray, m: int) -> np.ndarray:
    value = np.asarray(value, dtype=RING)
    out = np.empty((m,) + value.shape, dtype=RING)
    with np.errstate(over="ignore"):
        out[1:] = _random_ring(rng, cfg, (m - 1,) + value.shape)
        out[0] = wrap(cfg, value - out[1:].sum(axis=0, dtype=RING))
    return out


@dataclass(frozen=True)
class SharedValue:
    shares: np.ndarray
    cfg: FixedPointConfig

    def __post_init__(self):
        self.shares.flags.writeable = False

    @property
    def parties(self) -> int:
        return self.shares.shape[0]

    @property
    def shape(self) -> tuple:
        return self.shares.shape[1:]

    def __getitem__(self, idx) -> "SharedValue":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return SharedValue(np.array(self.shares[(slice(None),) + idx]), self.cfg)

    @property
    def T(self) -> "SharedValue":
        return SharedValue(np.ascontiguousarray(np.swapaxes(self.shares, -1, -2)), self.cfg)

    def reshape(self, *shape) -> "SharedValue":
        return SharedValue(self.shares.reshape((self.parties,) + tuple(shape)).copy(), self.cfg)

    def __add__(self, other):
        return add_shared(self, other) if isinstance(other, SharedValue) else add_public(self, other)

    def __sub__(self, other):
        return sub_shared(self, other) if isinstance(other, SharedValue) else add_public(self, -np.asarray(other))

    def __neg__(self):
        return neg(self)


SharedMatrix = SharedValue


def _check(a: SharedValue, b: SharedValue) -> None:
    if a.cfg != b.cfg or a.parties != b.parties:
        raise ConfigMismatch("operands use different configs or party counts")


def share(x, net: PartyNetwork, owner: int = 0) -> SharedValue:
    """Split ring value(s) ``x`` held by ``owner`` into fresh additive shares.

    The owner draws the shares of every other party uniformly from the ring
    and keeps the remainder, then sends each party its share.
    """
    x = np.asarray(x, dtype=RING)
    rng = net.rngs[owner]
    parts = _split(rng, net.cfg, x, net.parties)
    # move the remainder to the owner's slot so the owner keeps it
    parts[[0, owner]] = parts[[owner, 0]]
    net.send(owner, {j: parts[j] for j in range(net.parties) if j != owner}, "share")
    return SharedValue(parts, net.cfg)


def share_real(x, net: PartyNetwork, owner: int = 0) -> SharedValue:
    return share(encode(x, net.cfg), net, owner)


def public(x, net: PartyNetwork) -> SharedValue:
    """Trivial sharing of a public constant (party 0 holds it, no messages)."""
    v = encode(x, net.cfg)
    parts = np.zeros((net.parties,) + v.shape, dtype=RING)
    parts[0] = v
    return SharedValue(parts, net.cfg)


def add_shared(a: SharedValue, b: SharedValue) -> SharedValue:
    _check(a, b)
    with np.errstate(over="ignore"):
        return SharedValue(wrap(a.cfg, a.shares + b.shares), a.cfg)


def sub_shared(a: SharedValue, b: SharedValue) -> SharedValue:
    _check(a, b)
    with np.errstate(over="ignore"):
        return SharedValue(wrap(a.cfg, a.shares - b.shares), a.cfg)


def neg(a: SharedValue) -> SharedValue:
    with np.errstate(over="ignore"):
        return SharedValue(wrap(a.cfg, RING(0) - a.shares), a.cfg)


def add_public(a: SharedValue, c) -> SharedValue:
    """Add a public real; only party 0 adjusts its share."""
    v = np.broadcast_to(encode(c, a.cfg), a.shape)
    out = a.shares.copy()
    with np.errstate(over="ignore"):
        out[0] = wrap(a.cfg, out[0] + v)
    return SharedValue(out, a.cfg)


def mul_public_int(a: SharedValue, k) -> SharedValue:
    """Exact multiplication by a public integer (no truncation needed)."""
    k = from_signed(a.cfg, np.asarray(k, dtype=np.int64))
    with np.errstate(over="ignore"):
        return SharedValue(wrap(a.cfg, a.shares * k), a.cfg)


def mul_public(a: SharedValue, c, net: PartyNetwork) -> SharedValue:
    """Multiply by a public real, then truncate back to L fractional bits."""
    k = np.broadcast_to(encode(c, a.cfg), a.shape)
    with np.errstate(over="ignore"):
        raw = SharedValue(wrap(a.cfg, a.shares * k), a.cfg)
    return truncate(raw, net)


# -- preprocessing -------------------------------------------------------
@dataclass
class BeaverTriple:
    """Shared ``(a, b, c)`` with ``c = a * b`` as ring integers.

    For matrix triples ``c = a @ b``. ``c`` carries the raw product with 2L
    fractional bits; the truncation back to L bits happens on the opened
    result, because a pre-truncated ``c`` cannot be combined with the
    uniformly masked openings without wraparound error.
    """

    a: SharedValue
    b: SharedValue
    c: SharedValue
    kind: str = "mul"
    used: bool = field(default=False)

    def consume(self) -> None:
        if self.used:
            raise TripleReused("Beaver triple already consumed")
        self.used = True


@dataclass
class TruncPair:
    r: SharedValue
    r_shift: SharedValue
    used: bool = False


class TripleDealer:
    """Trusted dealer producing correlated randomness from a fixed seed."""

    def __init__(self, cfg: FixedPointConfig, parties: int, seed: int, net: PartyNetwork | None = None):
        self.cfg = cfg
        self.parties = parties
        self.rng = np.random.default_rng([seed, 0xDEA1])
        self.net = net
        self.issued = 0

    def _deal(self, value: np.ndarray) -> SharedValue:
        parts = _split(self.rng, self.cfg, value, self.parties)
        if self.net is not None:
            for j in range(self.parties):
                self.net.record_offline(j, int(parts[j].nbytes))
        return SharedValue(parts, self.cfg)

    def triple(self, shape=()) -> BeaverTriple:
        a = _random_ring(self.rng, self.cfg, shape)
        b = _random_ring(self.rng, self.cfg, shape)
        with np.errstate(over="ignore"):
            c = wrap(self.cfg, a * b)
        self.issued += 1
        return BeaverTriple(self._deal(a), self._deal(b), self._deal(c))

    def matmul_triple(self, n: int, k: int, p: int) -> BeaverTriple:
        a = _random_ring(self.rng, self.cfg, (n, k))
        b = _random_ring(self.rng, self.cfg, (k, p))
        with np.errstate(over="ignore"):
            c = wrap(self.cfg, a @ b)
        self.issued += 1
        return BeaverTriple(self._deal(a), self._deal(b), self._deal(c), kind="matmul")

    def trunc_pair(self, shape=()) -> TruncPair:
        r = self.rng.integers(0, 1 << _TRUNC_MASK_BITS, size=shape, dtype=np.uint64)
        return TruncPair(self._deal(r), self._deal(r >> RING(self.cfg.precision_bits)))


def generate_triples(count: int, net: PartyNetwork, shape=()) -> list[BeaverTriple]:
    return [net.dealer.triple(shape) for _ in range(count)]


# -- online protocol -----------------------------------------------------
def _open(values: list[SharedValue], net: PartyNetwork, kind: str) -> list[np.ndarray]:
    """Open several shared values in a single broadcast round."""
    m = net.parties
    payload = [np.concatenate([v.shares[i].ravel() for v in values]) for i in range(m)]
    received = net.exchange(payload, kind)
    with np.errstate(over="ignore"):
        total = wrap(net.cfg, np.sum(np.stack(received), axis=0, dtype=RING))
    out, pos = [], 0
    for v in values:
        size = int(np.prod(v.shape, dtype=int))
        out.append(total[pos : pos + size].reshape(v.shape))
        pos += size
    return out


def truncate(x: SharedValue, net: PartyNetwork) -> SharedValue:
    """Divide a raw 2L-bit product by 2^L.

    Two parties use the local shift: party 0 shifts its share, party 1 shifts
    the negation of its share. The result is off by at most one ulp except
    with probability about ``|x| / Q``. With more parties a dealer pair
    ``(r, r >> L)`` with a bounded mask is opened instead, costing one extra
    round.
    """
    cfg = x.cfg
    L = cfg.precision_bits
    if x.parties == 2:
        s0 = to_signed(cfg, x.shares[0]) >> L
        s1 = -((-to_signed(cfg, x.shares[1])) >> L)
        return SharedValue(np.stack([from_signed(cfg, s0), from_signed(cfg, s1)]), cfg)
    pair = net.dealer.trunc_pair(x.shape)
    if pair.used:
        raise TripleReused("truncation pair already consumed")
    pair.used = True
    bias = RING(1 << _TRUNC_MASK_BITS)
    with np.errstate(over="ignore"):
        masked = add_shared(x, pair.r)
        opened = _open([masked], net, "trunc_open")[0] + bias
        shifted = (opened >> RING(L)) - (bias >> RING(L))
        out = neg(pair.r_shift).shares.copy()
        out[0] = wrap(cfg, out[0] + shifted)
    return SharedValue(out, cfg)


def mul_shared(a: SharedValue, b: SharedValue, triple: BeaverTriple, net: PartyNetwork) -> SharedValue:
    """Elementwise product via one Beaver opening of ``a - t.a`` and ``b - t.b``."""
    _check(a, b)
    if triple.kind != "mul" or triple.a.shape != a.shape or triple.b.shape != b.shape:
        raise ConfigMismatch("triple shape does not match operands")
    triple.consume()
    e, d = _open([sub_shared(a, triple.a), sub_shared(b, triple.b)], net, "beaver_open")
    with np.errstate(over="ignore"):
        z = triple.c.shares + e * triple.b.shares + d * triple.a.shares
        z[0] += e * d
    return truncate(SharedValue(wrap(a.cfg, z), a.cfg), net)


def mul(a: SharedValue, b: SharedValue, net: PartyNetwork) -> SharedValue:
    """Elementwise product drawing a fresh triple from the network's dealer."""
    if a.shape != b.shape:
        shape = np.broadcast_shapes(a.shape, b.shape)
        a = broadcast(a, shape)
        b = broadcast(b, shape)
    return mul_shared(a, b, net.dealer.triple(a.shape), net)


def matmul_shared(a: SharedValue, b: SharedValue, triple: BeaverTriple, net: PartyNetwork) -> SharedValue:
    _check(a, b)
    if triple.kind != "matmul" or triple.a.shape != a.shape or triple.b.shape != b.shape:
        raise ConfigMismatch("matrix triple shape does not match operands")
    triple.consume()
    e, d = _open([sub_shared(a, triple.a), sub_shared(b, triple.b)], net, "beaver_open")
    with np.errstate(over="ignore"):
        z = triple.c.shares + e @ triple.b.shares + triple.a.shares @ d
        z[0] += e @ d
    return truncate(SharedValue(wrap(a.cfg, z), a.cfg), net)


def matmul(a: SharedValue, b: SharedValue, net: PartyNetwork) -> SharedValue:
    n, k = a.shape
    p = b.shape[1]
    return matmul_shared(a, b, net.dealer.matmul_triple(n, k, p), net)


def broadcast(a: SharedValue, shape) -> SharedValue:
    shape = tuple(shape)
    lead = (1,) * (len(shape) - len(a.shape))
    src = a.shares.reshape((a.parties,) + lead + a.shape)
    return SharedValue(np.broadcast_to(src, (a.parties,) + shape).copy(), a.cfg)


def stack(values: list[SharedValue]) -> SharedValue:
    return SharedValue(np.stack([v.shares for v in values], axis=1), values[0].cfg)


def reveal_ring(x: SharedValue, net: PartyNetwork) -> np.ndarray:
    return _open([x], net, "reveal")[0]


def reveal(x: SharedValue, net: PartyNetwork, noise_scale: float | None = None):
    """Open ``x`` to all parties, optionally adding Laplace(noise_scale) noise."""
    value = decode(reveal_ring(x, net), x.cfg)
    if noise_scale:
        if noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")
        value = value + net.noise_rng.laplace(0.0, noise_scale, size=np.shape(value))
        if np.ndim(value) == 0:
            value = float(value)
    return value
