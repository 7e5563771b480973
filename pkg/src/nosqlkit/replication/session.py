"""Client-side session guarantees expressed as vector-clock dominance.

A session remembers the clocks of its own writes and of what it has read.
Reads that carry a guarantee go to individual replicas in turn until one
returns a version whose clock dominates what the guarantee requires, or the
deadline passes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from nosqlkit.errors import GuaranteeTimeout, NoSQLKitError
from nosqlkit.replication.quorum import ReadResult
from nosqlkit.versioning import EMPTY_CLOCK, VectorClock, descends, vc_merge

if TYPE_CHECKING:
    from nosqlkit.cluster import Cluster


class Guarantee(Enum):
    NONE = "none"
    RYOW = "ryow"
    SESSION = "session"
    CAUSAL = "causal"
    MONOTONIC_READ = "monotonic"


Slot = tuple[str, bytes]


def _b(key: bytes | str) -> bytes:
    return key.encode("utf-8") if isinstance(key, str) else bytes(key)


@dataclass
class SessionState:
    """Per-session clocks. Vector clocks order versions of one key only, so
    the write and read clocks are tracked per (bucket, key)."""

    session_id: str
    guarantee: Guarantee = Guarantee.NONE
    scope_node: str | None = None
    write_clocks: dict[Slot, VectorClock] = field(default_factory=dict)
    read_clocks: dict[Slot, VectorClock] = field(default_factory=dict)

    def __post_init__(self):
        self.guarantee = Guarantee(self.guarantee)
        if self.guarantee is Guarantee.SESSION and self.scope_node is None:
            raise ValueError("a session-scoped guarantee needs a scope node")

    def last_write_clock(self, bucket: str, key: bytes | str) -> VectorClock:
        return self.write_clocks.get((bucket, _b(key)), EMPTY_CLOCK)

    def last_read_clock(self, bucket: str, key: bytes | str) -> VectorClock:
        return self.read_clocks.get((bucket, _b(key)), EMPTY_CLOCK)

    def required(self, bucket: str, key: bytes | str, via: str | None = None) -> VectorClock | None:
        """Clock a read must dominate, or None when anything goes."""
        g = self.guarantee
        wrote = self.last_write_clock(bucket, key)
        read = self.last_read_clock(bucket, key)
        if g is Guarantee.RYOW:
            return wrote
        if g is Guarantee.SESSION:
            return wrote if via == self.scope_node else None
        if g is Guarantee.MONOTONIC_READ:
            return read
        if g is Guarantee.CAUSAL:
            return vc_merge(read, wrote)
        return None

    def satisfied_by(self, bucket: str, key: bytes | str, clock: VectorClock,
                     via: str | None = None) -> bool:
        need = self.required(bucket, key, via)
        return need is None or descends(clock, need)

    def observe_write(self, bucket: str, key: bytes | str, clock: VectorClock) -> None:
        slot = (bucket, _b(key))
        self.write_clocks[slot] = vc_merge(self.write_clocks.get(slot, EMPTY_CLOCK), clock)

    def observe_read(self, bucket: str, key: bytes | str, clock: VectorClock) -> None:
        slot = (bucket, _b(key))
        self.read_clocks[slot] = vc_merge(self.read_clocks.get(slot, EMPTY_CLOCK), clock)


def session_write(cluster: Cluster, session: SessionState, bucket: str, key: bytes | str,
                  value: bytes | str, context: VectorClock | None = None,
                  via: str | None = None) -> VectorClock:
    if session.guarantee is Guarantee.SESSION and via is None:
        via = session.scope_node
    if context is None:
        context = cluster.get(bucket, key, via=via).context
    clock = cluster.put(bucket, key, value, context, via=via)
    session.observe_write(bucket, key, clock)
    return clock


def session_read(cluster: Cluster, session: SessionState, bucket: str, key: bytes | str,
                 via: str | None = None, deadline: int = 300, backoff: int = 5,
                 attempt_deadline: int = 60) -> ReadResult:
    if session.guarantee is Guarantee.SESSION and via is None:
        via = session.scope_node
    need = session.required(bucket, key, via)
    if need is None:
        result = cluster.get(bucket, key, via=via)
        session.observe_read(bucket, key, result.context)
        return result
    stop = cluster.now + deadline
    if session.guarantee is Guarantee.SESSION:
        # only the scope node is bound by the guarantee, so keep asking it
        attempts = itertools.repeat(dict(via=via))
    else:
        attempts = itertools.cycle([dict(replica=m) for m in cluster.preflist(bucket, key)])
    for target in attempts:
        if cluster.now > stop:
            break
        try:
            result = cluster.get(bucket, key, deadline=attempt_deadline, **target)
        except NoSQLKitError:
            result = None
        if result is not None and descends(result.context, need):
            session.observe_read(bucket, key, result.context)
            return result
        cluster.advance(backoff)
    raise GuaranteeTimeout(f"no replica of {key!r} satisfied {session.guarantee.value} "
                           f"(needs {need}) within {deadline} ticks")
