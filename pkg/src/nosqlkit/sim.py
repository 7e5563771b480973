"""Deterministic discrete-event simulator and the message network between actors.

Events fire in (virtual_time, insertion order). Every random choice (message
delay, drops, gossip peers, election timeouts) comes from generators seeded
by the scenario seed, so a run is a pure function of (seed, scenario).

Events are either foreground or background. Periodic housekeeping such as
gossip, heartbeats and anti-entropy ticks is background; quiescence means no
foreground work is left, so a fully idle cluster is quiescent even though its
periodic timers keep rescheduling themselves.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from nosqlkit.errors import LivelockGuard, UnknownTarget


@dataclass(frozen=True)
class TraceEntry:
    time: int
    kind: str
    detail: str

    def line(self) -> str:
        return f"{self.time}\t{self.kind}\t{self.detail}"


@dataclass(order=True)
class SimEvent:
    virtual_time: int
    seq: int
    kind: str = field(compare=False)
    action: Callable[[], Any] | None = field(compare=False, default=None)
    detail: str = field(compare=False, default="")
    background: bool = field(compare=False, default=False)
    cancelled: bool = field(compare=False, default=False)


class Simulator:
    def __init__(self, max_events: int = 2_000_000, record_trace: bool = True):
        self.now = 0
        self.max_events = max_events
        self.record_trace = record_trace
        self.trace: list[TraceEntry] = []
        # heap entries are (time, seq, event) so ordering never compares events
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._seq = 0
        self._foreground = 0
        self.processed = 0

    def schedule(self, delay: int, kind: str, action: Callable[[], Any] | None = None,
                 detail: str = "", background: bool = False) -> SimEvent:
        if delay < 0:
            raise ValueError("cannot schedule in the past")
        self._seq += 1
        ev = SimEvent(self.now + delay, self._seq, kind, action, detail, background)
        heapq.heappush(self._heap, (ev.virtual_time, ev.seq, ev))
        if not background:
            self._foreground += 1
        return ev

    def cancel(self, ev: SimEvent | None) -> None:
        if ev is None or ev.cancelled:
            return
        ev.cancelled = True
        if not ev.background:
            self._foreground -= 1

    def log(self, kind: str, detail: str) -> None:
        if self.record_trace:
            self.trace.append(TraceEntry(self.now, kind, detail))

    @property
    def pending_foreground(self) -> int:
        return self._foreground

    def step(self) -> bool:
        while self._heap:
            ev = heapq.heappop(self._heap)[2]
            if ev.cancelled:
                continue
            if not ev.background:
                self._foreground -= 1
            self.now = ev.virtual_time
            self.processed += 1
            if ev.detail:
                self.log(ev.kind, ev.detail)
            if ev.action is not None:
                ev.action()
            return True
        return False

    def _next_time(self) -> int | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_until(self, time: int | None = None, quiescence: bool = False,
                  until: Callable[[], bool] | None = None) -> list[TraceEntry]:
        """Advance the clock.

        With ``time`` every event due at or before it is processed and the
        clock ends at ``time``. With ``quiescence`` the run stops as soon as no
        foreground event is pending. ``until`` stops early when it returns true.
        """
        if time is None and not quiescence and until is None:
            raise ValueError("run_until needs a time, quiescence or a predicate")
        start = len(self.trace)
        budget = self.max_events
        while True:
            if until is not None and until():
                break
            if quiescence and self._foreground == 0:
                break
            nxt = self._next_time()
            if nxt is None or (time is not None and nxt > time):
                if time is not None:
                    self.now = max(self.now, time)
                break
            self.step()
            budget -= 1
            if budget <= 0:
                raise LivelockGuard(f"more than {self.max_events} events without finishing")
        return self.trace[start:]


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    kind: str
    body: Any = None
    background: bool = False


@dataclass
class NetworkConfig:
    seed: int = 0
    max_delay: int = 3
    drop_rate: float = 0.0
    # each link carries at most one bulk message per interval ticks (0 = unlimited)
    link_interval: int = 0
    bulk_kinds: frozenset[str] | None = None  # None: every node-to-node message is bulk

    def __post_init__(self):
        if self.max_delay < 1:
            raise ValueError("max_delay must be >= 1")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError("drop_rate must be in [0, 1)")


class Actor:
    """A node or client. Actors talk only through the network."""

    is_client = False

    def __init__(self, node_id: str):
        self.node_id = node_id
        self.net: SimNetwork | None = None
        self.incarnation = 0

    @property
    def sim(self) -> Simulator:
        return self.net.sim

    @property
    def alive(self) -> bool:
        return self.node_id not in self.net.crashed

    def send(self, dst: str, kind: str, body: Any = None, background: bool = False) -> None:
        self.net.send(Message(self.node_id, dst, kind, body, background))

    def set_timer(self, delay: int, callback: Callable[[], Any], background: bool = False,
                  label: str = "") -> SimEvent:
        inc = self.incarnation

        def fire():
            # timers die with the incarnation that set them
            if inc == self.incarnation and self.alive:
                callback()

        detail = f"{self.node_id} {label}" if label and self.net.trace_timers else ""
        return self.sim.schedule(delay, "timer", fire, detail, background)

    def on_message(self, msg: Message) -> None:
        pass

    def on_start(self) -> None:
        pass

    def on_crash(self) -> None:
        pass

    def on_recover(self) -> None:
        pass


class SimNetwork:
    def __init__(self, sim: Simulator, config: NetworkConfig | None = None):
        self.sim = sim
        self.config = config or NetworkConfig()
        self.rng = random.Random(self.config.seed)
        self.actors: dict[str, Actor] = {}
        self.crashed: set[str] = set()
        self.partitions: list[frozenset[str]] = []
        self.extra_delay: dict[tuple[str, str], int] = {}
        self._link_free: dict[tuple[str, str], int] = {}
        self.in_flight: dict[str, int] = {}
        self.trace_timers = False
        self.sent = 0
        self.dropped = 0

    def register(self, actor: Actor) -> None:
        if actor.node_id in self.actors:
            raise ValueError(f"duplicate actor {actor.node_id}")
        actor.net = self
        self.actors[actor.node_id] = actor

    def server_ids(self) -> list[str]:
        return sorted(i for i, a in self.actors.items() if not a.is_client)

    def _check(self, targets: Iterable[str]) -> list[str]:
        targets = list(targets)
        for t in targets:
            if t not in self.actors or self.actors[t].is_client:
                raise UnknownTarget(t)
        return targets

    def connected(self, a: str, b: str) -> bool:
        if a == b or self.actors[a].is_client or self.actors[b].is_client:
            return True
        return all((a in side) == (b in side) for side in self.partitions)

    def reachable(self, a: str, b: str) -> bool:
        return b not in self.crashed and a not in self.crashed and self.connected(a, b)

    def send(self, msg: Message) -> None:
        if msg.dst not in self.actors:
            raise UnknownTarget(msg.dst)
        self.sent += 1
        if msg.src in self.crashed:
            return
        rng = self.rng
        delay = 0 if msg.src == msg.dst else rng.randint(1, self.config.max_delay)
        drop = (self.config.drop_rate > 0 and msg.src != msg.dst
                and rng.random() < self.config.drop_rate)
        if drop or not self.connected(msg.src, msg.dst):
            self.dropped += 1
            return
        delay += self.extra_delay.get((msg.src, msg.dst), 0)
        at = self.sim.now + delay
        link = (msg.src, msg.dst)
        client_link = self.actors[msg.src].is_client or self.actors[msg.dst].is_client
        bulk = self.config.bulk_kinds is None or msg.kind in self.config.bulk_kinds
        if self.config.link_interval and bulk and not client_link and msg.src != msg.dst:
            at = max(at, self._link_free.get(link, 0))
            self._link_free[link] = at + self.config.link_interval
        self.in_flight[msg.kind] = self.in_flight.get(msg.kind, 0) + 1
        self.sim.schedule(at - self.sim.now, "deliver", lambda: self._deliver(msg),
                          f"{msg.src}->{msg.dst} {msg.kind}", msg.background)

    def _deliver(self, msg: Message) -> None:
        self.in_flight[msg.kind] -= 1
        if msg.dst in self.crashed or not self.connected(msg.src, msg.dst):
            self.dropped += 1
            return
        self.actors[msg.dst].on_message(msg)

    def pending(self, kinds: Iterable[str]) -> int:
        return sum(self.in_flight.get(k, 0) for k in kinds)

    # fault injection
    def inject_fault(self, fault: str, targets: Iterable[str] = ()) -> SimNetwork:
        targets = self._check(targets)
        if fault == "crash":
            for t in targets:
                if t not in self.crashed:
                    self.crashed.add(t)
                    actor = self.actors[t]
                    actor.incarnation += 1
                    self.sim.log("crash", t)
                    actor.on_crash()
        elif fault == "recover":
            for t in targets:
                if t in self.crashed:
                    self.crashed.discard(t)
                    actor = self.actors[t]
                    actor.incarnation += 1
                    self.sim.log("recover", t)
                    actor.on_recover()
        elif fault == "partition":
            side = frozenset(targets)
            if not side:
                raise UnknownTarget("partition needs at least one target")
            self.partitions.append(side)
            self.sim.log("partition", ",".join(sorted(side)))
        elif fault == "heal":
            if targets:
                side = frozenset(targets)
                self.partitions = [p for p in self.partitions if p != side]
            else:
                self.partitions = []
            self.sim.log("heal", ",".join(sorted(targets)) or "*")
        else:
            raise ValueError(f"unknown fault {fault!r}")
        return self

    def schedule_fault(self, at: int, fault: str, targets: Iterable[str] = ()) -> SimEvent:
        targets = self._check(targets)
        return self.sim.schedule(max(0, at - self.sim.now), fault,
                                 lambda: self.inject_fault(fault, targets))
