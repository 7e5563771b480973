"""Vector clocks, sibling resolution, optimistic locking and multi-version chains.

Clocks are immutable and canonical: entries are kept sorted by node id and
zero counters are never stored, so structural equality is clock equality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from nosqlkit.errors import EmptyInput, StaleWrite

DEFAULT_RETENTION = 10


class Order(Enum):
    EQUAL = "equal"
    BEFORE = "before"
    AFTER = "after"
    CONCURRENT = "concurrent"


@dataclass(frozen=True)
class VectorClock:
    entries: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        for node, counter in self.entries:
            if counter < 1:
                raise ValueError(f"counter for {node!r} must be positive")
        ids = [n for n, _ in self.entries]
        if ids != sorted(set(ids)):
            raise ValueError("entries must be sorted by node id without duplicates")

    @classmethod
    def of(cls, mapping: Mapping[str, int] | None = None) -> VectorClock:
        mapping = mapping or {}
        return cls(tuple(sorted((n, c) for n, c in mapping.items() if c)))

    def get(self, node_id: str) -> int:
        for n, c in self.entries:
            if n == node_id:
                return c
        return 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.entries)

    def encode(self) -> str:
        return ",".join(f"{n}:{c}" for n, c in self.entries)

    @classmethod
    def decode(cls, text: str) -> VectorClock:
        if not text:
            return cls()
        pairs = {}
        for part in text.split(","):
            node, _, counter = part.rpartition(":")
            pairs[node] = int(counter)
        return cls.of(pairs)

    def __str__(self):
        return "{" + self.encode() + "}"


EMPTY_CLOCK = VectorClock()


def vc_increment(clock: VectorClock, node_id: str) -> VectorClock:
    d = clock.as_dict()
    d[node_id] = d.get(node_id, 0) + 1
    return VectorClock.of(d)


def vc_merge(a: VectorClock, b: VectorClock) -> VectorClock:
    d = a.as_dict()
    for n, c in b.entries:
        if c > d.get(n, 0):
            d[n] = c
    return VectorClock.of(d)


def vc_merge_all(clocks: Iterable[VectorClock]) -> VectorClock:
    out = EMPTY_CLOCK
    for c in clocks:
        out = vc_merge(out, c)
    return out


def vc_compare(a: VectorClock, b: VectorClock) -> Order:
    da, db = a.as_dict(), b.as_dict()
    le = ge = True
    for n in da.keys() | db.keys():
        x, y = da.get(n, 0), db.get(n, 0)
        if x < y:
            ge = False
        elif x > y:
            le = False
    if le and ge:
        return Order.EQUAL
    if le:
        return Order.BEFORE
    if ge:
        return Order.AFTER
    return Order.CONCURRENT


def descends(a: VectorClock, b: VectorClock) -> bool:
    """True when ``a`` dominates or equals ``b``."""
    return vc_compare(a, b) in (Order.AFTER, Order.EQUAL)


@dataclass(frozen=True)
class VersionedValue:
    value: bytes
    clock: VectorClock
    tombstone: bool = False

    def __post_init__(self):
        if self.tombstone and self.value:
            raise ValueError("tombstones carry no payload")

    def sort_key(self):
        return (self.clock.encode(), self.tombstone, self.value)


def resolve_siblings(versions: Iterable[VersionedValue]) -> list[VersionedValue]:
    """Maximal versions under clock dominance, sorted by canonical clock encoding."""
    versions = list(versions)
    if not versions:
        raise EmptyInput("resolve_siblings needs at least one version")
    unique: dict[VectorClock, VersionedValue] = {}
    for v in sorted(versions, key=VersionedValue.sort_key):
        unique.setdefault(v.clock, v)
    candidates = list(unique.values())
    survivors = [
        v for v in candidates
        if not any(vc_compare(v.clock, o.clock) is Order.BEFORE for o in candidates)
    ]
    return sorted(survivors, key=VersionedValue.sort_key)


def live(siblings: Iterable[VersionedValue]) -> list[VersionedValue]:
    return [v for v in siblings if not v.tombstone]


@dataclass(frozen=True)
class OptimisticLock:
    version: int = 0


def optimistic_put(lock: OptimisticLock, expected_version: int) -> OptimisticLock:
    if expected_version != lock.version:
        raise StaleWrite(f"expected version {expected_version}, found {lock.version}")
    return OptimisticLock(lock.version + 1)


@dataclass(frozen=True)
class VersionChain:
    key: str
    versions: tuple[VersionedValue, ...] = ()
    retention_limit: int = DEFAULT_RETENTION

    def __post_init__(self):
        if self.retention_limit < 1:
            raise ValueError("retention_limit must be >= 1")

    def siblings(self) -> list[VersionedValue]:
        if not self.versions:
            return []
        return resolve_siblings(self.versions)

    def head_clock(self) -> VectorClock:
        return vc_merge_all(v.clock for v in self.siblings())

    def live_values(self) -> list[VersionedValue]:
        return live(self.siblings())

    @property
    def absent(self) -> bool:
        return not self.live_values()


def _prune(versions: list[VersionedValue], limit: int) -> tuple[VersionedValue, ...]:
    if len(versions) <= limit:
        return tuple(versions)
    current = set(resolve_siblings(versions))
    budget = max(0, limit - len(current))
    kept = []
    # walk newest to oldest so surviving history is the most recent
    for v in reversed(versions):
        if v in current:
            kept.append(v)
        elif budget:
            kept.append(v)
            budget -= 1
    return tuple(reversed(kept))


def mvcc_put(chain: VersionChain, expected_clock: VectorClock, new_value: bytes,
             writer_node: str, tombstone: bool = False) -> VersionChain:
    head = chain.head_clock()
    if vc_compare(head, expected_clock) not in (Order.EQUAL, Order.BEFORE):
        raise StaleWrite(f"{chain.key!r}: read {expected_clock}, head is now {head}")
    clock = vc_increment(vc_merge(head, expected_clock), writer_node)
    version = VersionedValue(b"" if tombstone else new_value, clock, tombstone)
    versions = _prune([*chain.versions, version], chain.retention_limit)
    return VersionChain(chain.key, versions, chain.retention_limit)


def absorb(chain: VersionChain, incoming: VersionedValue) -> tuple[VersionChain, bool]:
    """Merge a replicated version; returns the new chain and whether it changed."""
    for v in chain.siblings():
        if descends(v.clock, incoming.clock):
            return chain, False
    versions = _prune([*chain.versions, incoming], chain.retention_limit)
    return VersionChain(chain.key, versions, chain.retention_limit), True


def absorb_all(chain: VersionChain, incoming: Iterable[VersionedValue]) -> tuple[VersionChain, bool]:
    changed = False
    for v in incoming:
        chain, c = absorb(chain, v)
        changed = changed or c
    return chain, changed


# chain codec used by the storage layer; payloads are kept as text via
# surrogateescape so a dump never hides bytes behind base64
def _enc_bytes(b: bytes) -> str:
    return b.decode("utf-8", "surrogateescape")


def _dec_bytes(s: str) -> bytes:
    return s.encode("utf-8", "surrogateescape")


def encode_chain(chain: VersionChain) -> bytes:
    doc = {
        "key": chain.key,
        "retention": chain.retention_limit,
        "versions": [
            [v.clock.encode(), 1 if v.tombstone else 0, _enc_bytes(v.value)]
            for v in chain.versions
        ],
    }
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8", "surrogateescape")


def decode_chain(payload: bytes) -> VersionChain:
    doc = json.loads(payload.decode("utf-8", "surrogateescape"))
    versions = tuple(
        VersionedValue(_dec_bytes(val), VectorClock.decode(clock), bool(tomb))
        for clock, tomb, val in doc["versions"]
    )
    return VersionChain(doc["key"], versions, doc["retention"])
