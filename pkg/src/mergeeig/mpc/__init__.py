"""Simulated semi-honest multi-party computation engine."""
from .fixed_point import FixedPointConfig, decode, encode
from .functions import (
    LOG_DOMAIN,
    RECIPROCAL_DOMAIN,
    secure_ldl,
    secure_ldl_logdet,
    secure_log,
    secure_reciprocal,
)
from .network import Message, PartyNetwork, read_transcript
from .shares import (
    BeaverTriple,
    SharedMatrix,
    SharedValue,
    TripleDealer,
    add_public,
    add_shared,
    generate_triples,
    matmul,
    matmul_shared,
    mul,
    mul_public,
    mul_shared,
    public,
    reveal,
    reveal_ring,
    share,
    share_real,
    sub_shared,
    truncate,
)
