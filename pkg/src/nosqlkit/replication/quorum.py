"""Decentralised N/R/W replication: coordinators, read repair and anti-entropy.

A client may talk to any node. That node acts as a proxy: writes are
forwarded to the first member of the key's preference list it believes alive
(the coordinator), which checks the writer's context against its head,
stamps the new clock and fans the version out to the other replicas. Reads
are sent by the proxy to every replica and answered after ``r`` replies;
stragglers are still collected so divergent replicas can be repaired.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Iterable

from nosqlkit.errors import StaleWrite
from nosqlkit.storage import ChainStore
from nosqlkit.versioning import (
    EMPTY_CLOCK,
    VectorClock,
    VersionedValue,
    live,
    mvcc_put,
    resolve_siblings,
    vc_merge_all,
)

if TYPE_CHECKING:
    from nosqlkit.cluster import Node


@dataclass(frozen=True)
class QuorumConfig:
    n: int = 3
    r: int = 2
    w: int = 2

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 1 <= self.r <= self.n or not 1 <= self.w <= self.n:
            raise ValueError("need 1 <= r <= n and 1 <= w <= n")

    @property
    def strict(self) -> bool:
        return self.r + self.w > self.n


class WriteMode(Enum):
    SYNC = "sync"
    ASYNC = "async"


@dataclass(frozen=True)
class BucketConfig:
    name: str
    quorum: QuorumConfig = field(default_factory=QuorumConfig)
    write_mode: WriteMode = WriteMode.SYNC
    # a proxy that is itself a live replica of the key coordinates the write
    coordinate_locally: bool = False


def placement_namespace(bucket: str) -> str:
    """Buckets ``ns/sub`` share placement with every other ``ns/...`` bucket."""
    return bucket.split("/", 1)[0]


@dataclass(frozen=True)
class PutRequest:
    req_id: int
    bucket: str
    key: bytes
    value: bytes
    context: VectorClock = EMPTY_CLOCK
    tombstone: bool = False


@dataclass(frozen=True)
class GetRequest:
    req_id: int
    bucket: str
    key: bytes
    replica: str | None = None


@dataclass(frozen=True)
class Reply:
    req_id: int
    ok: bool
    clock: VectorClock | None = None
    siblings: tuple[VersionedValue, ...] = ()
    error: str = ""
    detail: str = ""
    responders: tuple[str, ...] = ()


@dataclass(frozen=True)
class ReadResult:
    siblings: tuple[VersionedValue, ...]
    responders: tuple[str, ...] = ()

    @property
    def values(self) -> list[VersionedValue]:
        return live(self.siblings)

    @property
    def context(self) -> VectorClock:
        return vc_merge_all(v.clock for v in self.siblings)

    @property
    def value(self) -> bytes | None:
        vals = self.values
        return vals[0].value if len(vals) == 1 else None

    @property
    def absent(self) -> bool:
        return not self.values


def read_repair(responses: dict[str, list[VersionedValue]]) -> dict[str, list[VersionedValue]]:
    """Replicas whose sibling set differs from the merged winners, with what to send them."""
    union = [v for sibs in responses.values() for v in sibs]
    if not union:
        return {}
    final = resolve_siblings(union)
    target = set(final)
    return {node: final for node, sibs in sorted(responses.items()) if set(sibs) != target}


def signature(siblings: Iterable[VersionedValue]) -> tuple[str, ...]:
    return tuple(f"{v.clock.encode()}{'~' if v.tombstone else ''}" for v in siblings)


def anti_entropy_sync(a: ChainStore, b: ChainStore, bucket: str,
                      shared: Callable[[bytes], bool] | None = None) -> int:
    """Merge every shared key of one bucket between two stores; returns records sent."""
    keys = sorted(set(a.keys(bucket)) | set(b.keys(bucket)))
    exchanged = 0
    for key in keys:
        if shared is not None and not shared(key):
            continue
        sa, sb = a.siblings(bucket, key), b.siblings(bucket, key)
        if signature(sa) == signature(sb):
            continue
        if sa:
            b.absorb(bucket, key, sa)
            exchanged += 1
        if sb:
            a.absorb(bucket, key, sb)
            exchanged += 1
    return exchanged


@dataclass
class _Forward:
    req: PutRequest
    client: str
    candidates: list[str]
    index: int = 0
    timer: object = None


@dataclass
class _Coordinate:
    req_id: int
    proxy: str
    needed: int
    acks: int = 1
    replied: bool = False
    clock: VectorClock | None = None
    timer: object = None
    answer: Callable[[Reply], None] | None = None


@dataclass
class _Read:
    req: GetRequest
    client: str
    targets: list[str]
    needed: int
    responses: dict[str, list[VersionedValue]] = field(default_factory=dict)
    replied: bool = False
    timer: object = None


class QuorumEngine:
    KINDS = frozenset({
        "ClientPut", "ClientGet", "CoordPut", "CoordPutReply", "ReplicaPut",
        "ReplicaPutAck", "ReplicaGet", "ReplicaGetReply", "Repair",
        "AEDigest", "AEPush", "AEPushBack", "Handoff",
    })
    REPLICATION_KINDS = ("ReplicaPut", "Repair", "Handoff")

    def __init__(self, node: Node, timeout: int = 40):
        self.node = node
        self.timeout = timeout
        # a coordinator may legitimately spend a full timeout waiting for acks
        self.forward_timeout = 2 * timeout + 10
        self._tokens = itertools.count(1)
        self._forwards: dict[int, _Forward] = {}
        self._coords: dict[int, _Coordinate] = {}
        self._reads: dict[int, _Read] = {}
        self.repairs_sent = 0
        self.ae_exchanged = 0

    def reset(self) -> None:
        """Coordinator state is volatile and vanishes in a crash."""
        self._forwards.clear()
        self._coords.clear()
        self._reads.clear()

    def handle(self, msg) -> None:
        getattr(self, "_on_" + msg.kind)(msg)

    # proxy: writes
    def _on_ClientPut(self, msg) -> None:
        req: PutRequest = msg.body
        node = self.node
        pl = list(node.preflist(req.bucket, req.key))
        believed = [m for m in pl if node.believes_alive(m)]
        if node.bucket_config(req.bucket).coordinate_locally and node.node_id in believed:
            believed.remove(node.node_id)
            believed.insert(0, node.node_id)
        st = _Forward(req, msg.src, believed or pl)
        token = next(self._tokens)
        self._forwards[token] = st
        self._forward(token)

    def _forward(self, token: int) -> None:
        st = self._forwards.get(token)
        if st is None:
            return
        if st.index >= len(st.candidates):
            del self._forwards[token]
            self.node.send(st.client, "ClientReply",
                           Reply(st.req.req_id, False, error="QuorumUnreachable",
                                 detail="no coordinator answered"))
            return
        coord = st.candidates[st.index]
        self.node.send(coord, "CoordPut", (token, st.req))

        def expire():
            if token in self._forwards and self._forwards[token] is st:
                st.index += 1
                self._forward(token)

        st.timer = self.node.set_timer(self.forward_timeout, expire, label=f"forward {token}")

    def _on_CoordPutReply(self, msg) -> None:
        token, reply = msg.body
        st = self._forwards.pop(token, None)
        if st is None:
            return
        self.node.sim.cancel(st.timer)
        self.node.send(st.client, "ClientReply", reply)

    # coordinator
    def _on_CoordPut(self, msg) -> None:
        token, req = msg.body
        node = self.node
        cfg = node.bucket_config(req.bucket)
        q = cfg.quorum
        pl = list(node.preflist(req.bucket, req.key))

        def answer(reply: Reply):
            node.send(msg.src, "CoordPutReply", (token, reply))

        sync = cfg.write_mode is WriteMode.SYNC
        if sync and sum(1 for m in pl if node.believes_alive(m)) < q.w:
            answer(Reply(req.req_id, False, error="QuorumUnreachable",
                         detail=f"fewer than w={q.w} live replicas"))
            return
        chain = node.store.get(req.bucket, req.key)
        try:
            chain = mvcc_put(chain, req.context, req.value, node.node_id, req.tombstone)
        except StaleWrite as exc:
            answer(Reply(req.req_id, False, error="StaleWrite", detail=str(exc)))
            return
        node.store.put(req.bucket, req.key, chain)
        version = chain.versions[-1]
        ctoken = next(self._tokens)
        for m in pl:
            if m != node.node_id:
                node.send(m, "ReplicaPut", (ctoken, req.bucket, req.key, version), not sync)
        needed = q.w if sync else 1
        if needed <= 1:
            answer(Reply(req.req_id, True, clock=version.clock))
            return
        st = _Coordinate(req.req_id, msg.src, needed, clock=version.clock, answer=answer)
        self._coords[ctoken] = st

        def expire():
            if self._coords.pop(ctoken, None) is st and not st.replied:
                answer(Reply(req.req_id, False, error="QuorumUnreachable",
                             detail=f"{st.acks} of w={needed} acks before timeout"))

        st.timer = node.set_timer(self.timeout, expire, label=f"coord {ctoken}")

    def _on_ReplicaPut(self, msg) -> None:
        ctoken, bucket, key, version = msg.body
        self.node.store.absorb(bucket, key, [version])
        self.node.send(msg.src, "ReplicaPutAck", ctoken, msg.background)

    def _on_ReplicaPutAck(self, msg) -> None:
        st = self._coords.get(msg.body)
        if st is None:
            return
        st.acks += 1
        if st.acks >= st.needed and not st.replied:
            st.replied = True
            del self._coords[msg.body]
            self.node.sim.cancel(st.timer)
            st.answer(Reply(st.req_id, True, clock=st.clock))

    # proxy: reads
    def _on_ClientGet(self, msg) -> None:
        req: GetRequest = msg.body
        node = self.node
        if req.replica is not None:
            targets, needed = [req.replica], 1
        else:
            targets = list(node.preflist(req.bucket, req.key))
            needed = node.bucket_config(req.bucket).quorum.r
        token = next(self._tokens)
        st = _Read(req, msg.src, targets, needed)
        self._reads[token] = st
        for t in targets:
            node.send(t, "ReplicaGet", (token, req.bucket, req.key))
        st.timer = node.set_timer(self.timeout, lambda: self._read_done(token, timed_out=True),
                                  label=f"read {token}")

    def _on_ReplicaGet(self, msg) -> None:
        token, bucket, key = msg.body
        sibs = self.node.store.siblings(bucket, key)
        self.node.send(msg.src, "ReplicaGetReply", (token, sibs))

    def _on_ReplicaGetReply(self, msg) -> None:
        token, sibs = msg.body
        st = self._reads.get(token)
        if st is None:
            return
        st.responses[msg.src] = sibs
        if len(st.responses) >= st.needed and not st.replied:
            st.replied = True
            self.node.send(st.client, "ClientReply", self._read_reply(st))
        if len(st.responses) == len(st.targets):
            self.node.sim.cancel(st.timer)
            self._read_done(token, timed_out=False)

    def _read_reply(self, st: _Read) -> Reply:
        union = [v for sibs in st.responses.values() for v in sibs]
        final = tuple(resolve_siblings(union)) if union else ()
        return Reply(st.req.req_id, True, siblings=final, responders=tuple(sorted(st.responses)))

    def _read_done(self, token: int, timed_out: bool) -> None:
        st = self._reads.pop(token, None)
        if st is None:
            return
        if not st.replied:
            self.node.send(st.client, "ClientReply",
                           Reply(st.req.req_id, False, error="QuorumUnreachable",
                                 detail=f"{len(st.responses)} of r={st.needed} replies"))
        if st.req.replica is not None or len(st.responses) < 2:
            return
        for target, versions in read_repair(st.responses).items():
            self.repairs_sent += 1
            self.node.send(target, "Repair", (st.req.bucket, st.req.key, versions))

    def _on_Repair(self, msg) -> None:
        bucket, key, versions = msg.body
        self.node.store.absorb(bucket, key, versions)

    def _on_Handoff(self, msg) -> None:
        for bucket, key, versions in msg.body:
            self.node.store.absorb(bucket, key, versions)

    # anti-entropy, three messages per exchange
    def _digest_for(self, peer: str) -> dict[tuple[str, bytes], tuple[str, ...]]:
        node = self.node
        out = {}
        for bucket in node.store.buckets():
            for key in node.store.keys(bucket):
                if peer in node.preflist(bucket, key):
                    out[(bucket, key)] = signature(node.store.siblings(bucket, key))
        return out

    def start_anti_entropy(self, peer: str, background: bool = False) -> None:
        self.node.send(peer, "AEDigest", self._digest_for(peer), background)

    def _on_AEDigest(self, msg) -> None:
        theirs = msg.body
        mine = self._digest_for(msg.src)
        records, want = [], []
        for k in sorted(set(theirs) | set(mine)):
            if k not in mine:
                want.append(k)
            elif k not in theirs:
                records.append((*k, self.node.store.siblings(*k)))
            elif mine[k] != theirs[k]:
                records.append((*k, self.node.store.siblings(*k)))
                want.append(k)
        self.ae_exchanged += len(records)
        if records or want:
            self.node.send(msg.src, "AEPush", (records, want), msg.background)

    def _on_AEPush(self, msg) -> None:
        records, want = msg.body
        for bucket, key, versions in records:
            self.node.store.absorb(bucket, key, versions)
        back = [(b, k, self.node.store.siblings(b, k)) for b, k in want]
        back = [r for r in back if r[2]]
        self.ae_exchanged += len(back)
        if back:
            self.node.send(msg.src, "AEPushBack", back, msg.background)

    def _on_AEPushBack(self, msg) -> None:
        for bucket, key, versions in msg.body:
            self.node.store.absorb(bucket, key, versions)
