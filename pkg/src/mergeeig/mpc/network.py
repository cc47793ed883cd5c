"""In-process party network with an append-only message transcript."""
from __future__ import annotations

import io
import queue
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import ConfigError
from .fixed_point import FixedPointConfig

DEALER = -1


@dataclass(frozen=True)
class Message:
    round: int
    sender: int
    receiver: int
    nbytes: int
    kind: str


class PartyNetwork:
    """Simulated semi-honest parties exchanging point-to-point messages.

    Every party owns a seeded generator (used for input sharing) and there is
    one trusted dealer generator for preprocessing. ``scheduler`` selects how
    one communication round is executed: ``"round_robin"`` steps the parties
    sequentially in id order, ``"threads"`` runs each party's send/receive
    step on its own worker. Both produce identical results and transcripts.

    A network instance carries exactly one protocol session; do not share it
    between concurrent protocol runs.
    """

    def __init__(
        self,
        parties: int = 2,
        cfg: FixedPointConfig | None = None,
        seed: int = 0,
        dealer_seed: int | None = None,
        scheduler: str = "round_robin",
        reciprocal_iters: int | None = None,
        log_iters: int | None = None,
    ):
        if parties < 2:
            raise ConfigError("at least two parties are required")
        if scheduler not in ("round_robin", "threads"):
            raise ConfigError(f"unknown scheduler {scheduler!r}")
        self.parties = parties
        self.cfg = cfg or FixedPointConfig()
        self.seed = seed
        self.dealer_seed = seed if dealer_seed is None else dealer_seed
        self.scheduler = scheduler
        self.reciprocal_iters = reciprocal_iters
        self.log_iters = log_iters
        self.rngs = [np.random.default_rng([seed, i]) for i in range(parties)]
        self.noise_rng = np.random.default_rng([seed, 0xA11CE])
        self.transcript: list[Message] = []
        self.offline: list[Message] = []
        self.round = 0
        self._channels = {
            (i, j): queue.SimpleQueue()
            for i in range(parties)
            for j in range(parties)
            if i != j
        }
        self._pool: ThreadPoolExecutor | None = None
        # imported here to avoid a cycle; the dealer needs the config
        from .shares import TripleDealer

        self.dealer = TripleDealer(self.cfg, parties, self.dealer_seed, self)

    # -- communication -------------------------------------------------
    def _party_step(self, i: int, outgoing: list[np.ndarray]) -> list[np.ndarray]:
        for j in range(self.parties):
            if j != i:
                self._channels[(i, j)].put(outgoing[i])
        return [outgoing[i] if j == i else self._channels[(j, i)].get() for j in range(self.parties)]

    def exchange(self, outgoing: list[np.ndarray], kind: str) -> list[np.ndarray]:
        """One broadcast round: party ``i`` sends ``outgoing[i]`` to all others.

        Returns the vector of payloads as received by party 0 (all views are
        identical in the semi-honest model).
        """
        m = self.parties
        self.round += 1
        for i in range(m):
            nbytes = int(outgoing[i].nbytes)
            for j in range(m):
                if j != i:
                    self.transcript.append(Message(self.round, i, j, nbytes, kind))
        if self.scheduler == "threads":
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=m)
            futures = [self._pool.submit(self._party_step, i, outgoing) for i in range(m)]
            views = [f.result() for f in futures]
        else:
            # sends complete before receives, so the queues never block
            for i in range(m):
                for j in range(m):
                    if j != i:
                        self._channels[(i, j)].put(outgoing[i])
            views = [
                [outgoing[i] if j == i else self._channels[(j, i)].get() for j in range(m)]
                for i in range(m)
            ]
        return views[0]

    def send(self, sender: int, payloads: dict[int, np.ndarray], kind: str) -> None:
        """One round of point-to-point messages from a single sender."""
        self.round += 1
        for receiver, payload in payloads.items():
            self.transcript.append(Message(self.round, sender, receiver, int(payload.nbytes), kind))

    def record_offline(self, receiver: int, nbytes: int, kind: str = "dealer") -> None:
        self.offline.append(Message(0, DEALER, receiver, nbytes, kind))

    # -- accounting ----------------------------------------------------
    def message_count(self, kind: str | None = None) -> int:
        return sum(1 for msg in self.transcript if kind is None or msg.kind == kind)

    def bytes_sent(self) -> int:
        return sum(msg.nbytes for msg in self.transcript)

    def export_transcript(self, fh: io.TextIOBase | None = None) -> str:
        """Line-delimited ``round sender receiver bytes kind`` records."""
        lines = [
            f"{msg.round}\t{msg.sender}\t{msg.receiver}\t{msg.nbytes}\t{msg.kind}"
            for msg in self.transcript
        ]
        text = "\n".join(lines) + ("\n" if lines else "")
        if fh is not None:
            fh.write(text)
        return text

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_transcript(lines: Iterable[str]) -> list[Message]:
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        r, s, d, b, k = line.split("\t")
        out.append(Message(int(r), int(s), int(d), int(b), k))
    return out
