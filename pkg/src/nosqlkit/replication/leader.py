"""Primary/secondaries replication with term-based elections.

One primary per group accepts writes, stamps them into an operation log and
streams the log to secondaries. Each member holds a persisted (term,
voted_for) pair and grants at most one vote per term, so two primaries can
never share a term. A primary that stops hearing from a majority steps down.
Groups larger than ``max_auto_failover_members`` never elect on their own.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Iterable, Mapping

from nosqlkit.errors import ManualFailoverRequired, NoQuorum, StaleWrite
from nosqlkit.replication.quorum import GetRequest, PutRequest, Reply
from nosqlkit.versioning import VersionChain, decode_chain, encode_chain, mvcc_put

if TYPE_CHECKING:
    from nosqlkit.cluster import Node

MAX_AUTO_FAILOVER_MEMBERS = 12
META_BUCKET = "_leader"

OpId = tuple[int, int]  # (term, index)


@dataclass(frozen=True)
class LeaderGroup:
    members: tuple[str, ...]
    arbiters: frozenset[str] = frozenset()
    primary: str | None = None
    term: int = 0
    max_auto_failover_members: int = MAX_AUTO_FAILOVER_MEMBERS

    def __post_init__(self):
        if not self.members:
            raise ValueError("a group needs members")
        if not self.arbiters <= set(self.members):
            raise ValueError("arbiters must be members")
        if self.arbiters == set(self.members):
            raise ValueError("a group needs at least one data-bearing member")

    @property
    def majority(self) -> int:
        return len(self.members) // 2 + 1

    @property
    def data_bearing(self) -> tuple[str, ...]:
        return tuple(m for m in self.members if m not in self.arbiters)

    @property
    def auto_failover(self) -> bool:
        return len(self.members) <= self.max_auto_failover_members


def _components(nodes: Iterable[str], connected: Callable[[str, str], bool]) -> list[set[str]]:
    left = sorted(nodes)
    out = []
    while left:
        seed = left.pop(0)
        comp = {seed}
        frontier = [seed]
        while frontier:
            cur = frontier.pop()
            for other in list(left):
                if connected(cur, other):
                    left.remove(other)
                    comp.add(other)
                    frontier.append(other)
        out.append(comp)
    return out


def elect_primary(group: LeaderGroup, alive: Iterable[str],
                  connected: Callable[[str, str], bool] = lambda a, b: True,
                  last_applied: Mapping[str, OpId] | None = None) -> LeaderGroup:
    """Choose a primary among a connected strict majority of live voters.

    The most up-to-date data-bearing member wins; ties go to the highest id.
    """
    if not group.auto_failover:
        raise ManualFailoverRequired(
            f"{len(group.members)} members exceed the automatic failover limit "
            f"of {group.max_auto_failover_members}")
    last_applied = last_applied or {}
    alive = set(alive) & set(group.members)
    for comp in _components(alive, connected):
        if len(comp) < group.majority:
            continue
        candidates = [m for m in comp if m not in group.arbiters]
        if not candidates:
            break
        winner = max(candidates, key=lambda m: (last_applied.get(m, (0, 0)), m))
        return replace(group, primary=winner, term=group.term + 1)
    raise NoQuorum(f"no connected majority of {group.majority} among live voters")


@dataclass(frozen=True)
class LeaderConfig:
    heartbeat: int = 10
    election_min: int = 40
    election_max: int = 80
    oplog_size: int = 1000


@dataclass(frozen=True)
class Op:
    term: int
    index: int
    bucket: str
    key: bytes
    chain: VersionChain

    @property
    def id(self) -> OpId:
        return (self.term, self.index)


@dataclass
class _Follower:
    match: OpId | None = None
    last_ack: int = -1


class LeaderEngine:
    KINDS = frozenset({
        "LClientWrite", "LClientRead", "LAppend", "LAck", "LSnapshot",
        "LVote", "LVoteReply",
    })

    def __init__(self, node: Node, group: LeaderGroup, config: LeaderConfig, seed: int):
        self.node = node
        self.group = group
        self.config = config
        self.rng = random.Random(f"{seed}/{node.node_id}")
        self.arbiter = node.node_id in group.arbiters
        self.role = "secondary"
        self.primary: str | None = None
        self.votes: set[str] = set()
        self.oplog: list[Op] = []
        self.log_base: OpId = (0, 0)
        self.followers: dict[str, _Follower] = {}
        self._election_timer = None
        self._load()

    # persistent state
    def _load(self) -> None:
        raw = self.node.store.backend.get(META_BUCKET, b"state")
        doc = json.loads(raw) if raw else {}
        self.term = doc.get("term", 0)
        self.voted_for = doc.get("voted_for")
        self.applied: OpId = tuple(doc.get("applied", (0, 0)))

    def _save(self) -> None:
        doc = {"term": self.term, "voted_for": self.voted_for, "applied": list(self.applied)}
        self.node.store.backend.put(META_BUCKET, b"state", json.dumps(doc).encode())

    # lifecycle
    def bootstrap(self, group: LeaderGroup) -> None:
        self.group = group
        self.term = group.term
        self.voted_for = group.primary
        self._save()
        if group.primary == self.node.node_id:
            self._become_primary()
        else:
            self.primary = group.primary
            self._arm_election()
        self._tick()

    def start(self) -> None:
        self._load()
        self.role = "secondary"
        self.primary = None
        self.oplog = []
        self.log_base = self.applied
        self.followers = {}
        self._arm_election()
        self._tick()

    def _arm_election(self) -> None:
        self.node.sim.cancel(self._election_timer)
        delay = self.rng.randint(self.config.election_min, self.config.election_max)
        self._election_timer = self.node.set_timer(delay, self._election_due, background=True,
                                                   label="election")

    def _tick(self) -> None:
        if self.role == "primary":
            self._check_lease()
            if self.role == "primary":
                self._replicate(background=True)
        self.node.set_timer(self.config.heartbeat, self._tick, background=True, label="tick")

    # elections
    def _election_due(self) -> None:
        if self.role == "primary":
            return
        if self.arbiter or not self.group.auto_failover:
            # the timer only fires when the primary went quiet
            self.primary = None
            if not self.group.auto_failover:
                self.node.sim.log("manual-failover", self.node.node_id)
            self._arm_election()
            return
        self.term += 1
        self.voted_for = self.node.node_id
        self._save()
        self.role = "candidate"
        self.primary = None
        self.votes = {self.node.node_id}
        for m in self.group.members:
            if m != self.node.node_id:
                self.node.send(m, "LVote", (self.term, self.applied), background=True)
        self._arm_election()
        self._maybe_win()

    def _step_down(self, term: int) -> None:
        if term > self.term:
            self.term = term
            self.voted_for = None
            self._save()
        if self.role != "secondary":
            self.node.sim.log("step-down", f"{self.node.node_id} term={self.term}")
        self.role = "secondary"
        self.primary = None
        self.followers = {}
        self._arm_election()

    def _on_LVote(self, msg) -> None:
        term, last = msg.body
        if term > self.term:
            self._step_down(term)
        grant = (term == self.term and self.voted_for in (None, msg.src)
                 and (self.arbiter or tuple(last) >= self.applied))
        if grant:
            self.voted_for = msg.src
            self._save()
            self._arm_election()
        self.node.send(msg.src, "LVoteReply", (self.term, grant), background=True)

    def _on_LVoteReply(self, msg) -> None:
        term, granted = msg.body
        if term > self.term:
            self._step_down(term)
            return
        if self.role == "candidate" and term == self.term and granted:
            self.votes.add(msg.src)
            self._maybe_win()

    def _maybe_win(self) -> None:
        if self.role == "candidate" and len(self.votes) >= self.group.majority:
            self._become_primary()

    def _become_primary(self) -> None:
        self.node.sim.cancel(self._election_timer)
        self.role = "primary"
        self.primary = self.node.node_id
        self.oplog = []
        self.log_base = self.applied
        now = self.node.sim.now
        self.followers = {m: _Follower(last_ack=now) for m in self.group.members
                          if m != self.node.node_id}
        self.node.sim.log("primary", f"term={self.term} node={self.node.node_id}")
        self._replicate(background=True)

    def _check_lease(self) -> None:
        now = self.node.sim.now
        fresh = 1 + sum(1 for f in self.followers.values()
                        if now - f.last_ack <= self.config.election_min)
        if fresh < self.group.majority:
            self._step_down(self.term)

    # replication stream
    def _ops_after(self, match: OpId | None) -> list[Op] | None:
        """Ops following ``match`` in our log, or None when a snapshot is needed."""
        if match is None:
            return []
        if match == self.log_base:
            return list(self.oplog)
        for i, op in enumerate(self.oplog):
            if op.id == match:
                return self.oplog[i + 1:]
        return None

    def _replicate(self, background: bool, only: Iterable[str] | None = None) -> None:
        targets = only if only is not None else list(self.followers)
        for m in targets:
            f = self.followers[m]
            if m in self.group.arbiters:
                self.node.send(m, "LAppend", (self.term, None, []), background)
                continue
            ops = self._ops_after(f.match)
            if ops is None:
                self._send_snapshot(m, background)
                continue
            prev = f.match if f.match is not None else self.applied
            if f.match is None:
                ops = []
            self.node.send(m, "LAppend", (self.term, prev, ops), background)

    def _send_snapshot(self, target: str, background: bool) -> None:
        store = self.node.store
        data = [(b, k, encode_chain(store.get(b, k)))
                for b in store.buckets() if b != META_BUCKET for k in store.keys(b)]
        self.node.send(target, "LSnapshot", (self.term, self.applied, data), background)

    def _accept_primary(self, msg, term: int) -> bool:
        if term < self.term:
            self.node.send(msg.src, "LAck", (self.term, self.applied, False), msg.background)
            return False
        if term > self.term or self.role != "secondary":
            self._step_down(term)
        self.primary = msg.src
        self._arm_election()
        return True

    def _on_LAppend(self, msg) -> None:
        term, prev, ops = msg.body
        if not self._accept_primary(msg, term):
            return
        if self.arbiter:
            self.node.send(msg.src, "LAck", (self.term, None, True), msg.background)
            return
        ok = True
        if ops:
            ids = [tuple(prev)] + [op.id for op in ops]
            if self.applied in ids:
                for op in ops[ids.index(self.applied):]:
                    self._apply(op)
            else:
                ok = False
        elif prev is not None and tuple(prev) != self.applied:
            ok = False
        self.node.send(msg.src, "LAck", (self.term, self.applied, ok), msg.background)

    def _on_LSnapshot(self, msg) -> None:
        term, last, data = msg.body
        if not self._accept_primary(msg, term):
            return
        store = self.node.store
        incoming = {(b, k) for b, k, _ in data}
        for b in store.buckets():
            if b == META_BUCKET:
                continue
            for k in store.keys(b):
                if (b, k) not in incoming:
                    store.backend.delete(b, k)
        for b, k, payload in data:
            store.backend.put(b, k, payload)
        self.applied = tuple(last)
        self._save()
        self.node.send(msg.src, "LAck", (self.term, self.applied, True), msg.background)

    def _on_LAck(self, msg) -> None:
        term, applied, ok = msg.body
        if term > self.term:
            self._step_down(term)
            return
        if self.role != "primary" or term != self.term or msg.src not in self.followers:
            return
        f = self.followers[msg.src]
        f.last_ack = self.node.sim.now
        if msg.src in self.group.arbiters:
            return
        applied = tuple(applied)
        had = f.match
        f.match = applied
        if not ok or had is None:
            # first contact or a mismatch: resend from wherever the secondary is
            if self._ops_after(applied) != []:
                self._replicate(msg.background, only=[msg.src])

    def _apply(self, op: Op) -> None:
        self.node.store.put(op.bucket, op.key, op.chain)
        self.applied = op.id
        self._save()

    # client requests
    def _reject(self, req_id: int) -> Reply:
        if self.primary is None:
            return Reply(req_id, False, error="NoPrimary", detail="election in progress")
        return Reply(req_id, False, error="NotPrimary", detail=self.primary)

    def _on_LClientWrite(self, msg) -> None:
        req: PutRequest = msg.body
        if self.role != "primary":
            self.node.send(msg.src, "ClientReply", self._reject(req.req_id))
            return
        store = self.node.store
        try:
            chain = mvcc_put(store.get(req.bucket, req.key), req.context, req.value,
                             self.node.node_id, req.tombstone)
        except StaleWrite as exc:
            self.node.send(msg.src, "ClientReply", Reply(req.req_id, False, error="StaleWrite",
                                                         detail=str(exc)))
            return
        op = Op(self.term, self.applied[1] + 1, req.bucket, req.key, chain)
        self.oplog.append(op)
        if len(self.oplog) > self.config.oplog_size:
            self.log_base = self.oplog.pop(0).id
        self._apply(op)
        self.node.send(msg.src, "ClientReply", Reply(req.req_id, True, clock=chain.versions[-1].clock))
        self._replicate(background=False)

    def _on_LClientRead(self, msg) -> None:
        req, preference = msg.body
        if preference == "primary" and self.role != "primary":
            self.node.send(msg.src, "ClientReply", self._reject(req.req_id))
            return
        sibs = tuple(self.node.store.siblings(req.bucket, req.key))
        self.node.send(msg.src, "ClientReply", Reply(req.req_id, True, siblings=sibs,
                                                     responders=(self.node.node_id,)))

    def handle(self, msg) -> None:
        getattr(self, "_on_" + msg.kind)(msg)
