"""Simulated cluster: node actors, a client actor and a synchronous facade.

``Cluster`` wires a ``Simulator``, a ``SimNetwork`` and one ``Node`` per
server. Its blocking helpers (``put``, ``get``, ...) send a request from the
built-in client and run the simulation until the reply arrives, so tests and
the CLI read like ordinary client code while every hop still goes through
the simulated network.

Each node keeps its storage across a crash: the memory backend stands in for
a disk that survives the process, and the log backend is re-opened through
recovery. Everything else on the node (coordinator state, gossip beliefs,
leader role) is volatile and rebuilt on restart.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from nosqlkit import errors
from nosqlkit.hashring import (
    PhysicalNode,
    RingConfig,
    RingState,
    build_ring,
    preference_list,
    ring_key,
    with_epoch,
)
from nosqlkit.membership import GossipConfig, MembershipView, gossip_round
from nosqlkit.replication.leader import LeaderConfig, LeaderEngine, LeaderGroup, elect_primary
from nosqlkit.replication.quorum import (
    BucketConfig,
    GetRequest,
    PutRequest,
    QuorumConfig,
    QuorumEngine,
    ReadResult,
    Reply,
    WriteMode,
    placement_namespace,
)
from nosqlkit.sim import Actor, Message, NetworkConfig, SimNetwork, Simulator
from nosqlkit.storage import BackendKind, ChainStore, LogStructuredBackend, MemoryBackend
from nosqlkit.versioning import EMPTY_CLOCK, VectorClock


@dataclass
class ClusterConfig:
    nodes: int | list[str] = 3
    seed: int = 0
    mode: str = "quorum"
    backend: BackendKind | str = BackendKind.MEMORY
    data_dir: str | None = None
    ring: RingConfig = field(default_factory=RingConfig)
    gossip: GossipConfig = field(default_factory=GossipConfig)
    leader: LeaderConfig = field(default_factory=LeaderConfig)
    arbiters: tuple[str, ...] = ()
    default_bucket: QuorumConfig = field(default_factory=QuorumConfig)
    max_delay: int = 3
    drop_rate: float = 0.0
    link_interval: int = 0
    request_timeout: int = 40
    client_deadline: int = 400
    anti_entropy_period: int | None = None
    record_trace: bool = True
    max_events: int = 2_000_000

    def __post_init__(self):
        if self.mode not in ("quorum", "leader"):
            raise ValueError("mode must be 'quorum' or 'leader'")
        self.backend = BackendKind(self.backend)
        if self.backend is BackendKind.LOG_STRUCTURED and not self.data_dir:
            raise ValueError("log-structured backend needs data_dir")

    def node_ids(self) -> list[str]:
        if isinstance(self.nodes, int):
            if self.nodes < 1:
                raise errors.EmptyNodeSet("cluster needs at least one node")
            return [f"n{i}" for i in range(1, self.nodes + 1)]
        return list(self.nodes)


ERRORS: dict[str, type[Exception]] = {
    "StaleWrite": errors.StaleWrite,
    "QuorumUnreachable": errors.QuorumUnreachable,
    "NotPrimary": errors.NotPrimary,
    "NoPrimary": errors.NoPrimary,
}


def raise_for(reply: Reply) -> None:
    if reply.ok:
        return
    cls = ERRORS.get(reply.error, errors.NoSQLKitError)
    if cls is errors.NotPrimary:
        raise errors.NotPrimary(f"not primary; primary is {reply.detail}", primary=reply.detail)
    raise cls(reply.detail or reply.error)


class Node(Actor):
    def __init__(self, node_id: str, cluster: Cluster):
        super().__init__(node_id)
        self.cluster = cluster
        cfg = cluster.config
        if cfg.backend is BackendKind.LOG_STRUCTURED:
            backend = LogStructuredBackend(Path(cfg.data_dir) / node_id)
        else:
            backend = MemoryBackend()
        self.store = ChainStore(backend)
        self.view = MembershipView(node_id, cluster.initial_ring, cfg.gossip)
        self.rng = random.Random(f"{cfg.seed}/gossip/{node_id}")
        self.quorum = QuorumEngine(self, cfg.request_timeout)
        self.leader: LeaderEngine | None = None

    @property
    def ring(self) -> RingState:
        return self.view.ring

    def bucket_config(self, bucket: str) -> BucketConfig:
        return self.cluster.bucket_config(bucket)

    def preflist(self, bucket: str, key: bytes):
        n = self.bucket_config(bucket).quorum.n
        return self.cluster.preflist_on(self.ring, bucket, key, n)

    def believes_alive(self, peer: str) -> bool:
        return peer == self.node_id or self.view.believed_alive(peer, self.sim.now)

    def on_start(self) -> None:
        self.view.reset_liveness(self.sim.now)
        self._gossip_tick()
        if self.cluster.config.anti_entropy_period:
            self._ae_tick()

    def on_crash(self) -> None:
        self.quorum.reset()
        backend = self.store.backend
        if isinstance(backend, LogStructuredBackend):
            backend.close()

    def on_recover(self) -> None:
        backend = self.store.backend
        if isinstance(backend, LogStructuredBackend):
            backend.reopen()
        self.view = MembershipView(self.node_id, self.view.ring, self.view.config)
        self.on_start()
        if self.leader is not None:
            self.leader.start()

    def _gossip_tick(self) -> None:
        for peer, digest in gossip_round(self.view, self.view.config.fanout, self.rng, self.sim.now):
            self.send(peer, "Gossip", digest, background=True)
        self.set_timer(self.view.config.period, self._gossip_tick, background=True, label="gossip")

    def _ae_tick(self) -> None:
        peers = [p for p in self.view.peers() if self.believes_alive(p)]
        if peers:
            self.quorum.start_anti_entropy(self.rng.choice(peers), background=True)
        self.set_timer(self.cluster.config.anti_entropy_period, self._ae_tick, background=True,
                       label="anti-entropy")

    def adopt_ring(self, ring: RingState) -> None:
        old = self.ring
        if self.view.adopt_ring(ring, self.sim.now):
            self._handoff(old)

    def _handoff(self, old: RingState) -> None:
        # push every local chain to replicas that joined its preference list
        outbox: dict[str, list] = {}
        for bucket in self.store.buckets():
            n = self.bucket_config(bucket).quorum.n
            for key in self.store.keys(bucket):
                before = set(self.cluster.preflist_on(old, bucket, key, n))
                for m in self.cluster.preflist_on(self.ring, bucket, key, n):
                    if m not in before and m != self.node_id:
                        outbox.setdefault(m, []).append((bucket, key, self.store.siblings(bucket, key)))
        for m, records in sorted(outbox.items()):
            self.send(m, "Handoff", records)

    def on_message(self, msg: Message) -> None:
        if msg.kind == "Gossip":
            old = self.ring
            if self.view.merge(msg.body, self.sim.now):
                self._handoff(old)
            if not msg.body.reply:
                self.send(msg.src, "Gossip", self.view.digest(reply=True), background=True)
        elif msg.kind in QuorumEngine.KINDS:
            self.quorum.handle(msg)
        elif msg.kind in LeaderEngine.KINDS and self.leader is not None:
            self.leader.handle(msg)


class Client(Actor):
    is_client = True

    def __init__(self, node_id: str = "client"):
        super().__init__(node_id)
        self.replies: dict[int, Reply] = {}
        self.callbacks: dict[int, Callable[[Reply], Any]] = {}

    def on_message(self, msg: Message) -> None:
        reply: Reply = msg.body
        cb = self.callbacks.pop(reply.req_id, None)
        if cb is not None:
            cb(reply)
        else:
            self.replies[reply.req_id] = reply


class Cluster:
    def __init__(self, config: ClusterConfig | None = None, **kw):
        self.config = config = config or ClusterConfig(**kw)
        self.sim = Simulator(config.max_events, config.record_trace)
        self.net = SimNetwork(self.sim, NetworkConfig(config.seed, config.max_delay,
                                                      config.drop_rate, config.link_interval,
                                                      frozenset(QuorumEngine.REPLICATION_KINDS)))
        ids = config.node_ids()
        self.initial_ring = build_ring([PhysicalNode(i) for i in ids], config.ring)
        self.buckets: dict[str, BucketConfig] = {}
        self.nodes: dict[str, Node] = {}
        for i in ids:
            node = Node(i, self)
            self.nodes[i] = node
            self.net.register(node)
        self.client = Client()
        self.net.register(self.client)
        self._req_ids = itertools.count(1)
        self.group: LeaderGroup | None = None
        if config.mode == "leader":
            self._start_leader_group(ids)
        for node in self.nodes.values():
            node.on_start()

    def _start_leader_group(self, ids: list[str]) -> None:
        group = LeaderGroup(tuple(ids), frozenset(self.config.arbiters))
        if group.auto_failover:
            group = elect_primary(group, ids)
        else:
            # beyond the failover limit the first primary is set by hand
            group = LeaderGroup(group.members, group.arbiters, max(group.data_bearing), 1)
        self.group = group
        for i, node in self.nodes.items():
            node.leader = LeaderEngine(node, group, self.config.leader, self.config.seed)
        for node in self.nodes.values():
            node.leader.bootstrap(group)

    # configuration
    def configure_bucket(self, name: str, n: int | None = None, r: int | None = None,
                         w: int | None = None, write_mode: WriteMode | str = WriteMode.SYNC,
                         coordinate_locally: bool = False) -> BucketConfig:
        d = self.config.default_bucket
        q = QuorumConfig(n if n is not None else d.n, r if r is not None else d.r,
                         w if w is not None else d.w)
        cfg = BucketConfig(name, q, WriteMode(write_mode), coordinate_locally)
        self.buckets[name] = cfg
        return cfg

    def bucket_config(self, bucket: str) -> BucketConfig:
        cfg = self.buckets.get(bucket) or self.buckets.get(placement_namespace(bucket))
        if cfg is None:
            cfg = self.buckets[bucket] = BucketConfig(bucket, self.config.default_bucket)
        return cfg

    def preflist_on(self, ring: RingState, bucket: str, key: bytes, n: int) -> tuple[str, ...]:
        return preference_list(ring_key(placement_namespace(bucket), key), ring, n).nodes

    @property
    def ring(self) -> RingState:
        return max((n.ring for n in self.nodes.values()), key=lambda r: r.epoch)

    def preflist(self, bucket: str, key: bytes | str) -> tuple[str, ...]:
        return self.preflist_on(self.ring, bucket, _b(key), self.bucket_config(bucket).quorum.n)

    @property
    def node_ids(self) -> list[str]:
        return sorted(self.nodes)

    def alive_ids(self) -> list[str]:
        return [i for i in self.node_ids if i not in self.net.crashed]

    # time
    @property
    def now(self) -> int:
        return self.sim.now

    def advance(self, ticks: int) -> None:
        self.sim.run_until(self.sim.now + ticks)

    def run_until_quiescent(self) -> None:
        self.sim.run_until(quiescence=True)

    # faults
    def crash(self, *ids: str) -> None:
        self.net.inject_fault("crash", ids)

    def recover(self, *ids: str) -> None:
        self.net.inject_fault("recover", ids)

    def partition(self, *side: str) -> None:
        self.net.inject_fault("partition", side)

    def heal(self, *side: str) -> None:
        self.net.inject_fault("heal", side)

    # requests
    def _pick(self, via: str | None, bucket: str, key: bytes) -> str:
        if via is not None:
            if via not in self.nodes:
                raise errors.UnknownTarget(via)
            return via
        if self.config.mode == "leader":
            return self.primary() or self.alive_ids()[0]
        alive = self.alive_ids()
        if not alive:
            raise errors.NodeUnavailable("every node is down")
        pl = [m for m in self.preflist(bucket, key) if m in alive]
        return pl[0] if pl else alive[0]

    def submit(self, via: str, kind: str, body_for: Callable[[int], Any],
               callback: Callable[[Reply], Any] | None = None) -> int:
        req_id = next(self._req_ids)
        if callback is not None:
            self.client.callbacks[req_id] = callback
        self.client.send(via, kind, body_for(req_id))
        return req_id

    def _await(self, req_id: int, deadline: int | None = None) -> Reply:
        limit = self.sim.now + (deadline or self.config.client_deadline)
        self.sim.run_until(limit, until=lambda: req_id in self.client.replies)
        reply = self.client.replies.pop(req_id, None)
        if reply is None:
            raise errors.NodeUnavailable(f"no reply for request {req_id} by t={limit}")
        return reply

    def put(self, bucket: str, key: bytes | str, value: bytes | str,
            context: VectorClock = EMPTY_CLOCK, via: str | None = None,
            tombstone: bool = False, deadline: int | None = None) -> VectorClock:
        key, value = _b(key), _b(value)
        via = self._pick(via, bucket, key)
        kind = "LClientWrite" if self.config.mode == "leader" else "ClientPut"
        req_id = self.submit(via, kind, lambda r: PutRequest(r, bucket, key, value, context, tombstone))
        reply = self._await(req_id, deadline)
        raise_for(reply)
        return reply.clock

    def delete(self, bucket: str, key: bytes | str, context: VectorClock,
               via: str | None = None) -> VectorClock:
        return self.put(bucket, key, b"", context, via, tombstone=True)

    def get(self, bucket: str, key: bytes | str, via: str | None = None,
            replica: str | None = None, read_preference: str = "primary",
            deadline: int | None = None) -> ReadResult:
        key = _b(key)
        via = replica or self._pick(via, bucket, key)
        if self.config.mode == "leader":
            req_id = self.submit(via, "LClientRead",
                                 lambda r: (GetRequest(r, bucket, key), read_preference))
        else:
            req_id = self.submit(via, "ClientGet", lambda r: GetRequest(r, bucket, key, replica))
        reply = self._await(req_id, deadline)
        raise_for(reply)
        return ReadResult(reply.siblings, reply.responders)

    def list_keys(self, bucket: str) -> list[bytes]:
        """Union of keys held by the live nodes (an expensive full scan)."""
        keys: set[bytes] = set()
        for i in self.alive_ids():
            keys.update(self.nodes[i].store.keys(bucket))
        return sorted(keys)

    # leader mode helpers
    def primary(self) -> str | None:
        for i in self.alive_ids():
            eng = self.nodes[i].leader
            if eng is not None and eng.role == "primary":
                return i
        return None

    def primaries_by_term(self) -> dict[int, set[str]]:
        out: dict[int, set[str]] = {}
        for e in self.sim.trace:
            if e.kind == "primary":
                fields = dict(part.split("=") for part in e.detail.split())
                out.setdefault(int(fields["term"]), set()).add(fields["node"])
        return out

    # anti-entropy
    def anti_entropy(self, a: str, b: str) -> int:
        before = self._ae_total()
        self.nodes[a].quorum.start_anti_entropy(b)
        self.run_until_quiescent()
        return self._ae_total() - before

    def _ae_total(self) -> int:
        return sum(n.quorum.ae_exchanged for n in self.nodes.values())

    def anti_entropy_round(self) -> int:
        alive = self.alive_ids()
        total = 0
        for i, a in enumerate(alive):
            for b in alive[i + 1:]:
                if self.net.connected(a, b):
                    total += self.anti_entropy(a, b)
        return total

    def converge(self, max_rounds: int = 10) -> int:
        """Pairwise anti-entropy rounds until one exchanges nothing; returns rounds used."""
        self.run_until_quiescent()
        for rounds in range(1, max_rounds + 1):
            if self.anti_entropy_round() == 0:
                return rounds
        raise errors.LivelockGuard(f"replicas still differ after {max_rounds} rounds")

    def replica_state(self, bucket: str, key: bytes | str) -> dict[str, tuple]:
        key = _b(key)
        return {m: tuple(self.nodes[m].store.siblings(bucket, key))
                for m in self.preflist(bucket, key)}

    def bump_epoch(self, at: str) -> RingState:
        """Re-issue the ring at one node with a higher epoch, as an admin change would."""
        node = self.nodes[at]
        ring = with_epoch(node.ring, node.ring.epoch + 1)
        node.adopt_ring(ring)
        return ring

    def trace_lines(self) -> list[str]:
        return [e.line() for e in self.sim.trace]


def _b(x: bytes | str) -> bytes:
    return x.encode("utf-8") if isinstance(x, str) else bytes(x)
