"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also collected in
the terminal summary) and fails when its criterion does not hold.
"""

from __future__ import annotations

import itertools
import random
import shutil
import time
from pathlib import Path

from nosqlkit.bench import CSV_HEADER, LAYERS, WorkloadSpec, csv_text, run_bench, writer_targets
from nosqlkit.cluster import Cluster, ClusterConfig
from nosqlkit.datamodels import ColumnStore, DocumentStore, GraphStore, LocalStore
from nosqlkit.datamodels.fixture import KEYSPACE, load_columnar, load_documents, load_graph
from nosqlkit.errors import (
    GuaranteeTimeout,
    IndexRequired,
    ManualFailoverRequired,
    NoSQLKitError,
)
from nosqlkit.hashring import (
    PhysicalNode,
    RingConfig,
    add_node,
    build_ring,
    key_hash,
    lookup_partition,
    modulo_shard,
    remove_node,
)
from nosqlkit.replication.leader import LeaderGroup, elect_primary
from nosqlkit.replication.session import Guarantee, SessionState, session_read, session_write
from nosqlkit.scenario import run_scenario_file
from nosqlkit.storage import LogStructuredBackend
from nosqlkit.versioning import (
    EMPTY_CLOCK,
    Order,
    VectorClock,
    VersionedValue,
    descends,
    resolve_siblings,
    vc_compare,
    vc_increment,
    vc_merge,
    vc_merge_all,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


# 1. ring arithmetic

def test_criterion_1_ring_arithmetic(verdict):
    start = time.perf_counter()
    ring = build_ring([PhysicalNode(f"n{i}") for i in (1, 2, 3)], RingConfig(partition_count=64))
    counts = sorted(ring.counts().values(), reverse=True)
    vnodes = ring.vnode_counts("n1")
    elapsed = time.perf_counter() - start
    ok = counts == [22, 21, 21] and sorted(vnodes, reverse=True) == [8, 7, 7] and elapsed < 1.0
    verdict(1, "ring arithmetic", ok, f"partitions={counts} vnodes={vnodes} {elapsed:.3f}s")


# 2. minimal movement

def _owners(ring, keys):
    return [ring.owners[lookup_partition(k, ring)] for k in keys]


def test_criterion_2_minimal_movement(verdict):
    start = time.perf_counter()
    keys = [f"key-{i}".encode() for i in range(1000)]
    hashes = [key_hash(k) for k in keys]
    config = RingConfig(partition_count=64)
    churns = []  # (before ring, after ring, moved partitions, node counts before/after)
    for n in range(2, 9):
        ring = build_ring([PhysicalNode(f"n{i}") for i in range(1, n + 1)], config)
        if n < 8:
            for name in (f"n{n + 1}", "a0"):  # a new id sorting last and one sorting first
                after, moved = add_node(ring, PhysicalNode(name))
                churns.append((ring, after, moved, n, n + 1))
        if n > 2:
            for leaving in ring.node_ids:
                after, moved = remove_node(ring, leaving)
                churns.append((ring, after, moved, n, n - 1))

    mismatches = 0
    min_modulo = 1.0
    for before, after, moved, n_before, n_after in churns:
        old, new = _owners(before, keys), _owners(after, keys)
        changed = {k for k, a, b in zip(keys, old, new) if a != b}
        in_moved = {k for k in keys if lookup_partition(k, before) in moved}
        mismatches += changed != in_moved
        modulo_moved = sum(modulo_shard(h, n_before) != modulo_shard(h, n_after) for h in hashes)
        min_modulo = min(min_modulo, modulo_moved / len(keys))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and min_modulo > 0.5 and elapsed < 10
    verdict(2, "minimal movement", ok,
            f"{len(churns)} churns, {mismatches} mismatches, modulo moved >= {min_modulo:.0%}, "
            f"{elapsed:.1f}s")


# 3. vector clock algebra

NODES3 = ("A", "B", "C")


def _vec(clock: VectorClock) -> tuple[int, ...]:
    return tuple(clock.get(n) for n in NODES3)


def _leq(x: tuple[int, ...], y: tuple[int, ...]) -> bool:
    return all(a <= b for a, b in zip(x, y))


def _oracle_order(x, y) -> Order:
    if x == y:
        return Order.EQUAL
    if _leq(x, y):
        return Order.BEFORE
    if _leq(y, x):
        return Order.AFTER
    return Order.CONCURRENT


def _random_history(rng: random.Random) -> list[VersionedValue]:
    """Writes on random nodes, each starting from a merge of some earlier versions."""
    versions: list[VersionedValue] = []
    for i in range(rng.randint(1, 12)):
        parents = rng.sample(versions, rng.randint(0, min(3, len(versions))))
        ctx = vc_merge_all(v.clock for v in parents)
        versions.append(VersionedValue(f"v{i}".encode(), vc_increment(ctx, rng.choice(NODES3))))
    return versions


def test_criterion_3_vector_clock_algebra(verdict):
    start = time.perf_counter()
    vecs = list(itertools.product(range(4), repeat=3))
    clocks = [VectorClock.of(dict(zip(NODES3, v))) for v in vecs]
    m = len(clocks)
    violations = 0

    order = [[vc_compare(a, b) for b in clocks] for a in clocks]
    leq = [[o in (Order.BEFORE, Order.EQUAL) for o in row] for row in order]
    for i in range(m):
        for j in range(m):
            violations += order[i][j] is not _oracle_order(vecs[i], vecs[j])
            violations += descends(clocks[i], clocks[j]) != leq[j][i]
    # partial order: reflexive, antisymmetric, transitive
    for i in range(m):
        violations += not leq[i][i]
        for j in range(m):
            violations += leq[i][j] and leq[j][i] and i != j
    for i, j in itertools.product(range(m), repeat=2):
        if leq[i][j]:
            row = leq[j]
            violations += sum(1 for k in range(m) if row[k] and not leq[i][k])

    # merge is the least upper bound, hence commutative, associative, idempotent
    index = {v: i for i, v in enumerate(vecs)}
    merge = [[index[_vec(vc_merge(a, b))] for b in clocks] for a in clocks]
    for i in range(m):
        violations += merge[i][i] != i
        for j in range(m):
            k = merge[i][j]
            violations += k != merge[j][i]
            violations += vecs[k] != tuple(max(a, b) for a, b in zip(vecs[i], vecs[j]))
            uppers = [u for u in range(m) if leq[i][u] and leq[j][u]]
            violations += not all(leq[k][u] for u in uppers)
    for i, j, k in itertools.product(range(m), repeat=3):
        violations += merge[merge[i][j]][k] != merge[i][merge[j][k]]

    # sibling resolution against a brute-force maximal antichain
    rng = random.Random(2024)
    for _ in range(500):
        history = _random_history(rng)
        held = rng.sample(history, rng.randint(1, len(history)))
        got = {_vec(v.clock) for v in resolve_siblings(held)}
        distinct = {_vec(v.clock) for v in held}
        want = {x for x in distinct if not any(x != y and _leq(x, y) for y in distinct)}
        violations += got != want
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 30
    verdict(3, "vector clock algebra", ok, f"{m} clocks, 500 histories, {violations} violations, "
                                           f"{elapsed:.1f}s")


# 4. quorum consistency

def _strict_schedule(seed: int) -> int:
    rng = random.Random(seed)
    c = Cluster(ClusterConfig(seed=seed, max_delay=rng.randint(1, 6), record_trace=False))
    c.advance(10)
    acked: dict[str, list[VectorClock]] = {}
    violations = 0
    for _ in range(rng.randint(3, 8)):
        key = rng.choice(("k0", "k1"))
        via = rng.choice(c.node_ids)
        if rng.random() < 0.5:
            ctx = c.get("b", key, via=via).context
            acked.setdefault(key, []).append(c.put("b", key, f"{seed}", ctx, via=via))
        else:
            got = c.get("b", key, via=via)
            for clock in acked.get(key, []):
                violations += not any(descends(v.clock, clock) for v in got.values)
        c.advance(rng.randint(0, 5))
    return violations


def _relaxed_stale_reads(seed: int) -> int:
    """Count reads that miss an acknowledged write, with r=w=1 and slow replication."""
    rng = random.Random(seed)
    c = Cluster(ClusterConfig(seed=seed, record_trace=False))
    c.configure_bucket("b", n=3, r=1, w=1, coordinate_locally=True)
    c.advance(10)
    for a, b in itertools.permutations(c.node_ids, 2):
        c.net.extra_delay[(a, b)] = rng.randint(0, 60)
    stale = 0
    ctx = EMPTY_CLOCK
    for _ in range(4):
        writer, reader = rng.sample(c.node_ids, 2)
        try:
            ctx = c.put("b", "k", "v", c.get("b", "k", via=writer).context, via=writer)
        except NoSQLKitError:
            continue
        got = c.get("b", "k", via=reader)
        stale += not any(descends(v.clock, ctx) for v in got.values)
    return stale


def test_criterion_4_quorum_consistency(verdict):
    start = time.perf_counter()
    violations = sum(_strict_schedule(seed) for seed in range(1000))
    stale = sum(_relaxed_stale_reads(seed) for seed in range(100))
    ok = violations == 0 and stale >= 1
    verdict(4, "quorum consistency", ok,
            f"n3r2w2: {violations} violations in 1000 schedules; r=w=1: {stale} stale reads; "
            f"{time.perf_counter() - start:.1f}s")


# 5. convergence

def _fault_scenario(seed: int) -> int:
    rng = random.Random(seed)
    c = Cluster(ClusterConfig(nodes=rng.randint(3, 5), seed=seed, record_trace=False))
    c.configure_bucket("loose", n=3, r=1, w=1)
    c.configure_bucket("strict", n=3, r=2, w=2)
    c.advance(10)
    ids = c.node_ids
    written: set[tuple[str, str]] = set()
    for _ in range(rng.randint(8, 20)):
        roll = rng.random()
        if roll < 0.55:
            bucket = rng.choice(("loose", "strict"))
            key = f"k{rng.randrange(6)}"
            alive = c.alive_ids()
            via = rng.choice(alive)
            try:
                ctx = c.get(bucket, key, via=via).context
                if rng.random() < 0.15:
                    c.delete(bucket, key, ctx, via=via)
                else:
                    c.put(bucket, key, f"{seed}-{rng.random():.4f}", ctx, via=via)
            except NoSQLKitError:
                pass
            written.add((bucket, key))
        elif roll < 0.7 and len(c.alive_ids()) > 1:
            c.crash(rng.choice(c.alive_ids()))
        elif roll < 0.8:
            c.recover(*ids)
        elif roll < 0.9:
            c.partition(*rng.sample(ids, rng.randint(1, len(ids) - 1)))
        else:
            c.heal()
        c.advance(rng.randint(0, 40))
    c.heal()
    c.recover(*ids)
    c.advance(100)
    c.converge(max_rounds=20)
    divergent = 0
    for bucket, key in written:
        states = set(c.replica_state(bucket, key).values())
        divergent += len(states) != 1
    return divergent


def test_criterion_5_convergence(verdict):
    start = time.perf_counter()
    divergent = sum(_fault_scenario(seed) for seed in range(200))
    elapsed = time.perf_counter() - start
    ok = divergent == 0 and elapsed < 120
    verdict(5, "convergence after heal", ok, f"200 scenarios, {divergent} divergent keys, "
                                             f"{elapsed:.1f}s")


# 6. election safety

def _primaries_by_term(trace: list[str]) -> dict[int, set[str]]:
    out: dict[int, set[str]] = {}
    for line in trace:
        _, kind, detail = line.split("\t", 2)
        if kind == "primary":
            fields = dict(part.split("=") for part in detail.split())
            out.setdefault(int(fields["term"]), set()).add(fields["node"])
    return out


def _leader_fault_trace(seed: int) -> list[str]:
    rng = random.Random(seed)
    c = Cluster(ClusterConfig(nodes=rng.choice((3, 5)), seed=seed, mode="leader"))
    ids = c.node_ids
    c.advance(20)
    for _ in range(rng.randint(3, 10)):
        roll = rng.random()
        if roll < 0.3:
            c.crash(rng.choice(ids))
        elif roll < 0.5:
            c.recover(*ids)
        elif roll < 0.7:
            c.partition(*rng.sample(ids, rng.randint(1, len(ids) - 1)))
        elif roll < 0.8:
            c.heal()
        else:
            try:
                c.put("b", "k", str(seed))
            except NoSQLKitError:
                pass
        c.advance(rng.randint(10, 150))
    c.heal()
    c.recover(*ids)
    c.advance(300)
    return c.trace_lines()


def test_criterion_6_election_safety(verdict):
    traces = [_leader_fault_trace(seed) for seed in range(100)]
    traces.append(run_scenario_file(SCENARIOS / "leader_failover.tsv", seed=7).trace)
    split = sum(sum(len(nodes) > 1 for nodes in _primaries_by_term(t).values()) for t in traces)
    elections = sum(len(_primaries_by_term(t)) for t in traces)

    big = LeaderGroup(tuple(f"m{i:02d}" for i in range(13)))
    try:
        elect_primary(big, big.members)
        refused = False
    except ManualFailoverRequired:
        refused = True
    c = Cluster(ClusterConfig(nodes=13, seed=1, mode="leader"))
    c.advance(20)
    first = c.primary()
    c.crash(first)
    c.advance(500)
    no_takeover = first is not None and c.primary() is None
    twelve = Cluster(ClusterConfig(nodes=12, seed=1, mode="leader"))
    twelve.advance(20)
    twelve.crash(twelve.primary())
    twelve.advance(500)
    takeover_at_12 = twelve.primary() is not None

    ok = split == 0 and refused and no_takeover and takeover_at_12
    verdict(6, "election safety", ok,
            f"{len(traces)} traces, {elections} terms, {split} split-brain terms; "
            f"13 members refuse={refused and no_takeover}; 12 members fail over={takeover_at_12}")


# 7. session guarantees

def _session_run(seed: int, guarantee: Guarantee) -> tuple[int, int]:
    """Returns (violations, timeouts) for one randomized session against slow replication."""
    rng = random.Random(f"{seed}-{guarantee.value}")
    c = Cluster(ClusterConfig(seed=seed, record_trace=False))
    c.configure_bucket("b", n=3, r=1, w=1, coordinate_locally=True)
    c.advance(10)
    for a, b in itertools.permutations(c.node_ids, 2):
        c.net.extra_delay[(a, b)] = rng.randint(0, 60)
    session = SessionState(f"s{seed}", guarantee)
    other = SessionState("other")
    wrote: dict[str, VectorClock] = {}
    read: dict[str, VectorClock] = {}
    violations = timeouts = 0
    for _ in range(10):
        key = rng.choice(("x", "y"))
        via = rng.choice(c.node_ids)
        roll = rng.random()
        try:
            if roll < 0.35:
                clock = session_write(c, session, "b", key, "mine", via=via)
                wrote[key] = vc_merge(wrote.get(key, EMPTY_CLOCK), clock)
            elif roll < 0.55:
                session_write(c, other, "b", key, "theirs", via=via)
            else:
                got = session_read(c, session, "b", key, via=via).context
                if guarantee in (Guarantee.RYOW, Guarantee.CAUSAL):
                    violations += not descends(got, wrote.get(key, EMPTY_CLOCK))
                if guarantee in (Guarantee.MONOTONIC_READ, Guarantee.CAUSAL):
                    violations += not descends(got, read.get(key, EMPTY_CLOCK))
                read[key] = vc_merge(read.get(key, EMPTY_CLOCK), got)
        except GuaranteeTimeout:
            timeouts += 1
        except NoSQLKitError:
            pass  # a lost write race, not a read
        c.advance(rng.randint(0, 10))
    return violations, timeouts


def test_criterion_7_session_guarantees(verdict):
    violations = timeouts = 0
    for seed in range(100):
        for g in (Guarantee.RYOW, Guarantee.MONOTONIC_READ, Guarantee.CAUSAL):
            v, t = _session_run(seed, g)
            violations += v
            timeouts += t
    ok = violations == 0 and timeouts == 0
    verdict(7, "session guarantees", ok, f"100 seeds x 3 guarantees, {violations} violations, "
                                         f"{timeouts} timeouts")


# 8. golden queries on the automobile fixture

def test_criterion_8_golden_queries(verdict):
    start = time.perf_counter()
    docs = DocumentStore(LocalStore())
    load_documents(docs)
    cf = ColumnStore(LocalStore())
    load_columnar(cf)
    graph = GraphStore(LocalStore())
    load_graph(graph)

    results = {
        "doc_find(modello=Punto)": (len(docs.find("autovetture", {"modello": "Punto"})), 2),
        "doc_group(alimentazione)": (dict(docs.group("autovetture", "alimentazione")),
                                     {"Benzina": 3, "GPL": 1, "Diesel": 4}),
        "cf_select(tipologia=Utilitaria)": (
            len(cf.select(KEYSPACE, "autovetture", {"tipologia": "Utilitaria"})), 4),
        "graph_filter(prezzo<20000)": (len(graph.filter("prezzo < 20000")), 5),
        "graph_match(Fiat)": (len(graph.match("produttori/1")), 2),
        "autovetture listing": (len(cf.scan(KEYSPACE, "autovetture")), 8),
        "produttori listing": (len(cf.scan(KEYSPACE, "produttori")), 4),
    }
    both = {"tipologia": "Utilitaria", "marca": "Fiat"}
    try:
        cf.count(KEYSPACE, "autovetture", both)
        rejected = False
    except IndexRequired:
        rejected = True
    results["combined filter rejected"] = (rejected, True)
    results["combined filter allow_filtering count"] = (
        cf.count(KEYSPACE, "autovetture", both, allow_filtering=True), 3)
    elapsed = time.perf_counter() - start
    wrong = {name: got for name, (got, want) in results.items() if got != want}
    ok = not wrong and elapsed < 5
    detail = "all 9 match" if not wrong else "mismatched: " + ", ".join(
        f"{name}={got!r} (expected {results[name][1]!r})" for name, got in wrong.items())
    verdict(8, "golden queries", ok, f"{detail}; {elapsed:.2f}s")


# 9. storage crash recovery

def _ops(rng: random.Random, count: int):
    return [(rng.choice(("put", "put", "del")), rng.choice(("a", "b")),
             bytes([rng.randrange(8)]), rng.randbytes(rng.randint(0, 12)))
            for _ in range(count)]


def _replay(seq):
    state = {}
    for op, bucket, key, payload in seq:
        if op == "put":
            state[(bucket, key)] = payload
        else:
            state.pop((bucket, key), None)
    return state


def _apply(backend, seq):
    for op, bucket, key, payload in seq:
        if op == "put":
            backend.put(bucket, key, payload)
        else:
            backend.delete(bucket, key)


def _contents(backend):
    return {(b, k): backend.get(b, k) for b in backend.buckets() for k in backend.keys(b)}


def test_criterion_9_storage_recovery(verdict, tmp_path):
    start = time.perf_counter()
    rng = random.Random(9)
    seq = _ops(rng, 300)
    pristine = tmp_path / "pristine"
    log = LogStructuredBackend(pristine)
    _apply(log, seq)
    log.close()
    [path] = list(pristine.glob("*.data"))
    data = path.read_bytes()
    # oracle: frame end offsets from the record layout, independent of the reader
    ends, pos = [], 0
    for op, bucket, key, payload in seq:
        pos += 4 + 19 + len(bucket) + len(key) + (len(payload) if op == "put" else 0) + 4
        ends.append(pos)
    assert pos == len(data)

    recovery_mismatches = 0
    for trial, cut in enumerate(rng.sample(range(len(data) + 1), 100)):
        d = tmp_path / f"cut{trial}"
        d.mkdir()
        (d / path.name).write_bytes(data[:cut])
        complete = sum(1 for e in ends if e <= cut)
        log = LogStructuredBackend(d)
        recovery_mismatches += _contents(log) != _replay(seq[:complete])
        # the torn tail is gone, so new writes land after the last good record
        log.put("a", b"after", b"crash")
        log.reopen()
        recovery_mismatches += log.get("a", b"after") != b"crash"
        log.close()
        shutil.rmtree(d)

    compaction_mismatches = 0
    for trial in range(20):
        seq = _ops(rng, rng.randint(1, 200))
        d = tmp_path / f"compact{trial}"
        log = LogStructuredBackend(d, rotate_bytes=256)
        _apply(log, seq)
        before = _contents(log)
        probes = {(b, bytes([k])) for b in ("a", "b") for k in range(8)}
        reads = {p: log.get(*p) for p in probes}
        log.compact()
        compaction_mismatches += _contents(log) != before or before != _replay(seq)
        compaction_mismatches += any(log.get(*p) != v for p, v in reads.items())
        log.reopen()
        compaction_mismatches += _contents(log) != before
        compaction_mismatches += len(list(d.glob("*.data"))) != 1
        log.close()
    elapsed = time.perf_counter() - start
    ok = recovery_mismatches == 0 and compaction_mismatches == 0 and elapsed < 30
    verdict(9, "storage crash recovery", ok,
            f"100 cuts: {recovery_mismatches} mismatches; 20 compactions: "
            f"{compaction_mismatches} mismatches; {elapsed:.1f}s")


# 10. bench harness

def test_criterion_10_bench_harness(verdict):
    start = time.perf_counter()
    nodes = ["n1", "n2", "n3"]
    results = []
    problems = []
    lag_ok = True
    for layer in LAYERS:
        for writers in (1, 10, 20):
            by_targets = {}
            lags = {}
            for policy in ("single", "balanced"):
                targets = tuple(writer_targets(writers, nodes, WorkloadSpec(policy=policy).policy))
                if targets not in by_targets:
                    by_targets[targets] = run_bench(WorkloadSpec(layer, 10_000, writers, policy))
                r = by_targets[targets]
                lags[policy] = r.lag
                results.append(r)
                if r.errors or r.read_back != len(r.acknowledged) or len(r.acknowledged) != 10_000:
                    problems.append(f"{layer}/{writers}/{policy}: {r.errors} errors, "
                                    f"{r.read_back}/{len(r.acknowledged)} read back")
            if lags["balanced"] > lags["single"]:
                lag_ok = False
                problems.append(f"{layer}/{writers}: balanced lag {lags['balanced']} > "
                                f"single lag {lags['single']}")
    text = csv_text(results)
    header_ok = text.splitlines()[0] == ",".join(CSV_HEADER) and len(text.splitlines()) == 25
    ok = not problems and header_ok and lag_ok
    verdict(10, "bench harness", ok,
            (f"{len(results)} rows, 100% read-back, balanced lag <= single lag"
             if ok else "; ".join(problems) or "bad CSV") + f"; {time.perf_counter() - start:.0f}s")
