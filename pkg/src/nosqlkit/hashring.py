"""Consistent-hashing ring over a fixed set of equal partitions.

The hash space is split into ``partition_count`` contiguous arcs. Every
partition is owned by exactly one physical node; inside a node, partitions
are dealt round-robin to that node's virtual nodes, whose number is
proportional to the node's capacity weight.

Membership changes never re-deal the whole ring:

* a joining node claims partitions from over-quota owners only, so the
  moved set is exactly what the new node received;
* a leaving node hands each of its partitions to the owner of the next
  partition clockwise.

All states are immutable snapshots, so rings can be shared freely between
simulated nodes and threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

from nosqlkit.errors import (
    DuplicateNodeId,
    EmptyNodeSet,
    LastNode,
    UnknownNode,
    ZeroShards,
)

DIGEST_BITS = 160


@dataclass(frozen=True)
class RingConfig:
    hash_space_bits: int = 160
    partition_count: int = 64
    vnodes_per_unit_capacity: int = 3

    def __post_init__(self):
        if not 16 <= self.hash_space_bits <= DIGEST_BITS:
            raise ValueError(f"hash_space_bits must be in [16, {DIGEST_BITS}]")
        p = self.partition_count
        if p < 1 or p & (p - 1):
            raise ValueError("partition_count must be a power of two >= 1")
        if p.bit_length() - 1 > self.hash_space_bits:
            raise ValueError("more partitions than hash values")
        if self.vnodes_per_unit_capacity < 1:
            raise ValueError("vnodes_per_unit_capacity must be >= 1")

    @property
    def arc_size(self) -> int:
        return (1 << self.hash_space_bits) // self.partition_count


@dataclass(frozen=True)
class PhysicalNode:
    node_id: str
    capacity_weight: int = 1

    def __post_init__(self):
        if self.capacity_weight < 1:
            raise ValueError("capacity_weight must be >= 1")


@dataclass(frozen=True)
class PreferenceList:
    nodes: tuple[str, ...]
    requested: int

    @property
    def shortfall(self) -> bool:
        return len(self.nodes) < self.requested

    @property
    def primary(self) -> str:
        return self.nodes[0]

    def __iter__(self):
        return iter(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, i):
        return self.nodes[i]


@dataclass(frozen=True)
class RingState:
    epoch: int
    config: RingConfig
    nodes: tuple[PhysicalNode, ...]
    owners: tuple[str, ...]
    _prefs: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(self.owners) != self.config.partition_count:
            raise ValueError("owners must cover every partition")
        ids = {n.node_id for n in self.nodes}
        stray = set(self.owners) - ids
        if stray:
            raise ValueError(f"partitions owned by non-members: {sorted(stray)}")

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.node_id for n in self.nodes)

    def node(self, node_id: str) -> PhysicalNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise UnknownNode(node_id)

    def vnode_count(self, node_id: str) -> int:
        return self.node(node_id).capacity_weight * self.config.vnodes_per_unit_capacity

    def counts(self) -> dict[str, int]:
        out = {n.node_id: 0 for n in self.nodes}
        for o in self.owners:
            out[o] += 1
        return out

    def partitions_of(self, node_id: str) -> list[int]:
        return [p for p, o in enumerate(self.owners) if o == node_id]

    @cached_property
    def _vnode_index(self) -> tuple[int, ...]:
        seen: dict[str, int] = {}
        out = []
        for o in self.owners:
            rank = seen.get(o, 0)
            seen[o] = rank + 1
            out.append(rank % self.vnode_count(o))
        return tuple(out)

    def vnode_of(self, partition: int) -> int:
        return self._vnode_index[partition]

    def vnode_counts(self, node_id: str) -> list[int]:
        counts = [0] * self.vnode_count(node_id)
        for p in self.partitions_of(node_id):
            counts[self.vnode_of(p)] += 1
        return counts

    def assignment(self) -> list[tuple[int, int, str]]:
        return [(p, self.vnode_of(p), o) for p, o in enumerate(self.owners)]

    def dump(self) -> str:
        return "".join(f"{p}\t{v}\t{o}\n" for p, v, o in self.assignment())

    def preference_for_partition(self, partition: int, replicas: int) -> PreferenceList:
        cached = self._prefs.get((partition, replicas))
        if cached is not None:
            return cached
        chosen: list[str] = []
        total = len(self.owners)
        for step in range(total):
            owner = self.owners[(partition + step) % total]
            if owner not in chosen:
                chosen.append(owner)
                if len(chosen) == replicas:
                    break
        pl = PreferenceList(tuple(chosen), replicas)
        self._prefs[(partition, replicas)] = pl
        return pl


def parse_dump(text: str, config: RingConfig, epoch: int = 1,
               weights: dict[str, int] | None = None) -> RingState:
    """Rebuild a ring from its canonical dump; vnode columns are validated."""
    weights = weights or {}
    rows = [line.split("\t") for line in text.splitlines() if line.strip()]
    owners = [""] * config.partition_count
    for p, _v, o in rows:
        owners[int(p)] = o
    ids = sorted(set(owners))
    nodes = tuple(PhysicalNode(i, weights.get(i, 1)) for i in ids)
    ring = RingState(epoch, config, nodes, tuple(owners))
    for p, v, _o in rows:
        if ring.vnode_of(int(p)) != int(v):
            raise ValueError(f"vnode column mismatch at partition {p}")
    return ring


def ring_key(bucket: str, key: bytes | str) -> bytes:
    if isinstance(key, str):
        key = key.encode("utf-8")
    return bucket.encode("utf-8") + b"\x00" + key


def key_hash(data: bytes, bits: int = DIGEST_BITS) -> int:
    digest = int.from_bytes(hashlib.sha1(data).digest(), "big")
    return digest >> (DIGEST_BITS - bits)


def lookup_partition(key: bytes, ring: RingState) -> int:
    # a hash sitting exactly on an arc start belongs to that arc
    h = key_hash(key, ring.config.hash_space_bits)
    return h // ring.config.arc_size


def preference_list(key: bytes, ring: RingState, replicas: int) -> PreferenceList:
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    return ring.preference_for_partition(lookup_partition(key, ring), replicas)


def _sorted_members(nodes: Iterable[PhysicalNode]) -> list[PhysicalNode]:
    nodes = list(nodes)
    if not nodes:
        raise EmptyNodeSet("a ring needs at least one node")
    seen = set()
    for n in nodes:
        if n.node_id in seen:
            raise DuplicateNodeId(n.node_id)
        seen.add(n.node_id)
    return sorted(nodes, key=lambda n: n.node_id)


def partition_quotas(nodes: Sequence[PhysicalNode], partition_count: int) -> dict[str, int]:
    """Largest-remainder split of partitions by weight; ties go to lower node ids."""
    total = sum(n.capacity_weight for n in nodes)
    base = {n.node_id: partition_count * n.capacity_weight // total for n in nodes}
    rem = {n.node_id: partition_count * n.capacity_weight % total for n in nodes}
    leftover = partition_count - sum(base.values())
    for nid in sorted(base, key=lambda i: (-rem[i], i))[:leftover]:
        base[nid] += 1
    return base


def build_ring(nodes: Iterable[PhysicalNode], config: RingConfig | None = None) -> RingState:
    config = config or RingConfig()
    members = _sorted_members(nodes)
    P = config.partition_count
    quota = partition_quotas(members, P)
    assigned = {n.node_id: 0 for n in members}
    owners = []
    for p in range(P):
        # node furthest behind its proportional share so far
        best = max(
            (n.node_id for n in members if assigned[n.node_id] < quota[n.node_id]),
            key=lambda i: (quota[i] * (p + 1) - assigned[i] * P, -members_index(members, i)),
        )
        owners.append(best)
        assigned[best] += 1
    return RingState(1, config, tuple(members), tuple(owners))


def members_index(members: Sequence[PhysicalNode], node_id: str) -> int:
    for i, n in enumerate(members):
        if n.node_id == node_id:
            return i
    raise UnknownNode(node_id)


def _spread_order(count: int) -> list[int]:
    bits = max(1, (count - 1).bit_length())
    return sorted(range(count), key=lambda p: int(format(p, f"0{bits}b")[::-1], 2))


def add_node(ring: RingState, node: PhysicalNode) -> tuple[RingState, frozenset[int]]:
    if node.node_id in ring.node_ids:
        raise DuplicateNodeId(node.node_id)
    members = _sorted_members([*ring.nodes, node])
    P = ring.config.partition_count
    quota = partition_quotas(members, P)
    owners = list(ring.owners)
    counts = ring.counts()
    counts[node.node_id] = 0
    new = node.node_id
    moved: set[int] = set()

    def claim(p: int) -> None:
        donor = owners[p]
        if donor != new and counts[donor] > quota[donor] and counts[new] < quota[new]:
            owners[p] = new
            counts[donor] -= 1
            counts[new] += 1
            moved.add(p)

    # first take back the partitions a fresh build of this membership would
    # hand the new node, so leave-then-rejoin restores the original layout
    home = build_ring(members, ring.config).owners
    for p in range(P):
        if home[p] == new:
            claim(p)
    for p in _spread_order(P):
        claim(p)
    return RingState(ring.epoch + 1, ring.config, tuple(members), tuple(owners)), frozenset(moved)


def remove_node(ring: RingState, node_id: str) -> tuple[RingState, frozenset[int]]:
    if node_id not in ring.node_ids:
        raise UnknownNode(node_id)
    if len(ring.nodes) == 1:
        raise LastNode(node_id)
    P = ring.config.partition_count
    owners = list(ring.owners)
    moved = frozenset(p for p in range(P) if owners[p] == node_id)
    for p in moved:
        q = (p + 1) % P
        while ring.owners[q] == node_id:
            q = (q + 1) % P
        owners[p] = ring.owners[q]
    members = tuple(n for n in ring.nodes if n.node_id != node_id)
    return RingState(ring.epoch + 1, ring.config, members, tuple(owners)), moved


def modulo_shard(primary_key: int, shard_count: int) -> int:
    if shard_count < 1:
        raise ZeroShards("shard_count must be >= 1")
    if primary_key < 0:
        raise ValueError("primary_key must be non-negative")
    return primary_key % shard_count


def with_epoch(ring: RingState, epoch: int) -> RingState:
    return replace(ring, epoch=epoch, _prefs={})
