"""Bulk-insert workloads against each data layer, with CSV output.

Writers run as interleaved client streams inside the deterministic simulator:
each step lets the next writer in turn issue one insert through its target
node. Writes are acknowledged by the coordinating replica and replicated in the
background over rate-limited links, so a node that takes every write builds up
a replication backlog. That backlog at the end of the write phase is the
``lag`` column.

Wall time and throughput are measured on the host and are informational only.
"""

from __future__ import annotations

import csv
import io
import json
import random
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Any, Iterable

from nosqlkit.cluster import Cluster, ClusterConfig
from nosqlkit.datamodels.columnar import ColumnStore
from nosqlkit.datamodels.document import DocumentStore
from nosqlkit.datamodels.graph import BUCKET as GRAPH_BUCKET
from nosqlkit.datamodels.graph import GraphStore
from nosqlkit.datamodels.kv import KeyValueStore
from nosqlkit.datamodels.store import ClusterStore
from nosqlkit.errors import IoFailure, NoSQLKitError
from nosqlkit.membership import GossipConfig
from nosqlkit.replication.quorum import QuorumEngine, WriteMode

LAYERS = ("kv", "doc", "cf", "graph")
CSV_HEADER = ("layer", "records", "writers", "policy", "wall_ms", "ops_per_sec", "errors", "lag")

MAKES = ("Fiat", "Audi", "Bmw", "Renault", "Lancia", "Opel")
FUELS = ("Benzina", "Diesel", "GPL", "Metano")
KINDS = ("Utilitaria", "Berlina", "Monovolume", "Suv")


class TargetPolicy(Enum):
    SINGLE = "single"
    BALANCED = "balanced"


@dataclass(frozen=True)
class WorkloadSpec:
    layer: str = "kv"
    records: int = 100
    writers: int = 1
    policy: TargetPolicy = TargetPolicy.SINGLE
    value_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise ValueError(f"layer must be one of {LAYERS}, got {self.layer!r}")
        if self.records < 1 or self.writers < 1:
            raise ValueError("records and writers must be >= 1")
        if self.value_size < 0:
            raise ValueError("value_size must be >= 0")
        object.__setattr__(self, "policy", TargetPolicy(self.policy))


@dataclass
class BenchResult:
    spec: WorkloadSpec
    wall_ms: float
    per_writer: tuple[int, ...]
    errors: int
    lag: int
    read_back: int = 0
    ticks: int = 0
    targets: tuple[str, ...] = ()
    acknowledged: list[int] = field(default_factory=list, repr=False)

    @property
    def ops(self) -> int:
        return sum(self.per_writer)

    @property
    def ops_per_sec(self) -> float:
        return self.ops / (self.wall_ms / 1000.0) if self.wall_ms > 0 else 0.0

    def row(self) -> tuple:
        s = self.spec
        return (s.layer, s.records, s.writers, s.policy.value, f"{self.wall_ms:.1f}",
                f"{self.ops_per_sec:.1f}", self.errors, self.lag)


def writer_split(writers: int, targets: int) -> list[int]:
    """Writers per target, as even as possible with earlier targets taking the extra."""
    base, extra = divmod(writers, targets)
    return [base + (1 if i < extra else 0) for i in range(targets)]


def writer_targets(writers: int, nodes: list[str], policy: TargetPolicy) -> list[str]:
    if policy is TargetPolicy.SINGLE:
        return [nodes[0]] * writers
    out: list[str] = []
    for node, count in zip(nodes, writer_split(writers, len(nodes))):
        out.extend([node] * count)
    return out


def synthetic_records(count: int, seed: int, value_size: int = 32) -> list[dict[str, Any]]:
    rng = random.Random(seed)
    out = []
    for i in range(1, count + 1):
        out.append({
            "id": i,
            "marca": rng.choice(MAKES),
            "modello": f"M{rng.randrange(1000):03d}",
            "tipologia": rng.choice(KINDS),
            "alimentazione": rng.choice(FUELS),
            "prezzo": rng.randrange(8000, 60000, 500),
            "note": "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(value_size)),
        })
    return out


# one adapter per layer: schema setup, one insert, one read-back probe
class _Layer:
    def __init__(self, store: ClusterStore):
        self.store = store

    def setup(self) -> None:
        pass


class _KV(_Layer):
    def __init__(self, store):
        super().__init__(store)
        self.kv = KeyValueStore(store)

    def setup(self):
        self.kv.configure("bench", 3)

    def write(self, rec):
        self.kv.put("bench", f"r{rec['id']:07d}", json.dumps(rec, sort_keys=True))

    def found(self, rec):
        return self.kv.get("bench", f"r{rec['id']:07d}").value is not None


class _Doc(_Layer):
    def __init__(self, store):
        super().__init__(store)
        self.docs = DocumentStore(store, replication=3)

    def write(self, rec):
        doc = dict(rec)
        doc["_id"] = doc.pop("id")
        self.docs.insert("bench", doc)

    def found(self, rec):
        return self.docs.get("bench", rec["id"]) is not None


class _CF(_Layer):
    COLUMNS = {"id": "int", "marca": "text", "modello": "text", "tipologia": "text",
               "alimentazione": "text", "prezzo": "int", "note": "text"}

    def __init__(self, store):
        super().__init__(store)
        self.cf = ColumnStore(store)

    def setup(self):
        self.cf.create_keyspace("bench", 3)
        self.cf.create_table("bench", "records", self.COLUMNS, "id")

    def write(self, rec):
        self.cf.upsert("bench", "records", rec)

    def found(self, rec):
        return self.cf.get_row("bench", "records", rec["id"]) is not None


class _Graph(_Layer):
    def __init__(self, store):
        super().__init__(store)
        self.graph = GraphStore(store)

    def setup(self):
        self.store.configure(GRAPH_BUCKET, 3)

    def write(self, rec):
        props = dict(rec)
        self.graph.add_node(f"record/{props.pop('id')}", props, ("record",))

    def found(self, rec):
        try:
            self.graph.node(f"record/{rec['id']}")
            return True
        except KeyError:
            return False


_LAYERS = {"kv": _KV, "doc": _Doc, "cf": _CF, "graph": _Graph}


def bench_cluster(seed: int = 0, nodes: int = 3, link_interval: int = 6) -> Cluster:
    """A fault-free cluster whose replication links carry one message per ``link_interval`` ticks.

    Membership never changes during a run, so gossip is slowed down to keep
    the event count dominated by the workload itself.
    """
    return Cluster(ClusterConfig(nodes=nodes, seed=seed, link_interval=link_interval,
                                 gossip=GossipConfig(period=50), record_trace=False))


def _store(cluster: Cluster, via: str | None) -> ClusterStore:
    return ClusterStore(cluster, via=via, write_mode=WriteMode.ASYNC, coordinate_locally=True)


def run_bench(spec: WorkloadSpec, cluster: Cluster | None = None, read_back: bool = True) -> BenchResult:
    cluster = cluster or bench_cluster(spec.seed)
    layer_cls = _LAYERS[spec.layer]
    layer_cls(_store(cluster, None)).setup()
    targets = writer_targets(spec.writers, cluster.alive_ids(), spec.policy)
    writers = [layer_cls(_store(cluster, t)) for t in targets]
    records = synthetic_records(spec.records, spec.seed, spec.value_size)
    queues = [records[w::spec.writers] for w in range(spec.writers)]

    done = [0] * spec.writers
    errors = 0
    acknowledged: list[int] = []
    start_tick = cluster.now
    started = time.perf_counter()
    for step in range(max(len(q) for q in queues)):
        for w, queue in enumerate(queues):
            if step >= len(queue):
                continue
            rec = queue[step]
            try:
                writers[w].write(rec)
            except NoSQLKitError:
                errors += 1
                continue
            done[w] += 1
            acknowledged.append(rec["id"])
    wall_ms = (time.perf_counter() - started) * 1000.0
    lag = cluster.net.pending(QuorumEngine.REPLICATION_KINDS)
    ticks = cluster.now - start_tick

    result = BenchResult(spec, wall_ms, tuple(done), errors, lag, ticks=ticks,
                         targets=tuple(targets), acknowledged=acknowledged)
    if read_back:
        drain(cluster)
        probe = layer_cls(_store(cluster, None))
        by_id = {r["id"]: r for r in records}
        result.read_back = sum(1 for i in acknowledged if probe.found(by_id[i]))
    return result


def drain(cluster: Cluster) -> None:
    """Run until no replication message is in flight and no request is pending."""
    kinds = QuorumEngine.REPLICATION_KINDS
    cluster.sim.run_until(
        until=lambda: cluster.net.pending(kinds) == 0 and cluster.sim.pending_foreground == 0)


def emit_csv(results: Iterable[BenchResult], out: str | Path | IO[str]) -> None:
    try:
        if isinstance(out, (str, Path)):
            with open(out, "w", newline="", encoding="utf-8") as fh:
                _write_csv(results, fh)
        else:
            _write_csv(results, out)
    except OSError as exc:
        raise IoFailure(f"cannot write CSV: {exc}") from exc


def _write_csv(results: Iterable[BenchResult], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        w.writerow(r.row())


def csv_text(results: Iterable[BenchResult]) -> str:
    buf = io.StringIO()
    _write_csv(results, buf)
    return buf.getvalue()
