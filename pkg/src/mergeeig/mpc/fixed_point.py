"""Fixed-point encoding of reals into the ring Z/QZ with Q = 2**ring_bits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, Overflow

RING = np.uint64


@dataclass(frozen=True)
class FixedPointConfig:
    precision_bits: int = 16
    ring_bits: int = 64

    def __post_init__(self):
        if not 0 < self.ring_bits <= 64:
            raise ConfigError("ring_bits must be in (0, 64]")
        if not 0 < self.precision_bits < self.ring_bits - 1:
            raise ConfigError("precision_bits must be in (0, ring_bits - 1)")

    @property
    def scale(self) -> int:
        return 1 << self.precision_bits

    @property
    def modulus(self) -> int:
        return 1 << self.ring_bits

    @property
    def mask(self) -> np.uint64:
        return RING(self.modulus - 1)

    @property
    def ulp(self) -> float:
        return 1.0 / self.scale


def wrap(cfg: FixedPointConfig, v: np.ndarray) -> np.ndarray:
    """Reduce uint64 words into the ring (no-op for a 64-bit ring)."""
    if cfg.ring_bits == 64:
        return v
    return v & cfg.mask


def to_signed(cfg: FixedPointConfig, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=RING)
    if cfg.ring_bits == 64:
        return v.view(np.int64)
    half = 1 << (cfg.ring_bits - 1)
    out = v.astype(np.int64)
    return np.where(out >= half, out - cfg.modulus, out)


def from_signed(cfg: FixedPointConfig, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return wrap(cfg, v.view(RING))


def encode(x, cfg: FixedPointConfig) -> np.ndarray:
    """Round ``x * 2**L`` to the nearest integer and embed it in the ring.

    Negative values use the centred representative, so ``-0.25`` at L=16 maps
    to ``Q - 16384``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise Overflow("cannot encode non-finite values")
    limit = cfg.modulus / 2
    scaled = np.rint(x * cfg.scale)
    if np.any(np.abs(scaled) >= limit):
        raise Overflow(f"|x| * 2^{cfg.precision_bits} exceeds Q/2")
    return from_signed(cfg, scaled.astype(np.int64))


def decode(v, cfg: FixedPointConfig) -> np.ndarray | float:
    out = to_signed(cfg, v).astype(float) / cfg.scale
    return float(out) if out.ndim == 0 else out
