"""Push-pull gossip of ring state and liveness.

Each node owns one ``MembershipView``. Every gossip period it bumps its own
heartbeat and pushes (epoch, ring, heartbeats) to ``fanout`` random peers;
a receiver merges and answers with its own view. A peer whose heartbeat has
not advanced for ``suspect_after`` periods is suspect, after ``dead_after``
periods dead.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from nosqlkit.hashring import RingState


class Liveness(Enum):
    ALIVE = "alive"
    SUSPECT = "suspect"
    DEAD = "dead"


@dataclass(frozen=True)
class GossipConfig:
    fanout: int = 2
    period: int = 5
    suspect_after: int = 3
    dead_after: int = 6

    def __post_init__(self):
        if self.fanout < 1 or self.period < 1:
            raise ValueError("fanout and period must be >= 1")
        if not 0 < self.suspect_after <= self.dead_after:
            raise ValueError("need 0 < suspect_after <= dead_after")


@dataclass(frozen=True)
class GossipDigest:
    sender: str
    epoch: int
    ring: RingState
    heartbeats: tuple[tuple[str, int], ...]
    reply: bool = False


@dataclass
class MembershipView:
    node_id: str
    ring: RingState
    config: GossipConfig = field(default_factory=GossipConfig)
    heartbeats: dict[str, int] = field(default_factory=dict)
    last_seen: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for peer in self.ring.node_ids:
            self.heartbeats.setdefault(peer, 0)
            self.last_seen.setdefault(peer, 0)

    @property
    def epoch(self) -> int:
        return self.ring.epoch

    def peers(self) -> list[str]:
        return sorted(p for p in self.heartbeats if p != self.node_id)

    def status(self, peer: str, now: int) -> Liveness:
        if peer == self.node_id:
            return Liveness.ALIVE
        silent = now - self.last_seen.get(peer, 0)
        if silent > self.config.dead_after * self.config.period:
            return Liveness.DEAD
        if silent > self.config.suspect_after * self.config.period:
            return Liveness.SUSPECT
        return Liveness.ALIVE

    def believed_alive(self, peer: str, now: int) -> bool:
        return self.status(peer, now) is Liveness.ALIVE

    def digest(self, reply: bool = False) -> GossipDigest:
        return GossipDigest(self.node_id, self.epoch, self.ring,
                            tuple(sorted(self.heartbeats.items())), reply)

    def adopt_ring(self, ring: RingState, now: int) -> bool:
        if ring.epoch <= self.ring.epoch:
            return False
        self.ring = ring
        for peer in ring.node_ids:
            if peer not in self.heartbeats:
                self.heartbeats[peer] = 0
                self.last_seen[peer] = now
        return True

    def merge(self, digest: GossipDigest, now: int) -> bool:
        """Fold a peer's digest in; returns whether the ring changed."""
        changed = self.adopt_ring(digest.ring, now)
        for peer, beat in digest.heartbeats:
            if beat > self.heartbeats.get(peer, -1):
                self.heartbeats[peer] = beat
                self.last_seen[peer] = now
        return changed

    def reset_liveness(self, now: int) -> None:
        """Forget what was learned before a restart; everyone starts alive."""
        for peer in self.heartbeats:
            self.last_seen[peer] = now


def gossip_round(view: MembershipView, fanout: int, rng: random.Random,
                 now: int = 0) -> list[tuple[str, GossipDigest]]:
    """Bump our heartbeat and pick up to ``fanout`` peers to push to."""
    view.heartbeats[view.node_id] = view.heartbeats.get(view.node_id, 0) + 1
    view.last_seen[view.node_id] = now
    peers = view.peers()
    if not peers:
        return []
    chosen = rng.sample(peers, min(fanout, len(peers)))
    d = view.digest()
    return [(p, d) for p in chosen]
