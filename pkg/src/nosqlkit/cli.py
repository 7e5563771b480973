"""Command line entry point.

Exit status: 0 on success, 1 when a scenario assertion or a request fails,
2 on a usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from nosqlkit.bench import LAYERS, WorkloadSpec, emit_csv, run_bench
from nosqlkit.cluster import Cluster, ClusterConfig
from nosqlkit.errors import NoSQLKitError
from nosqlkit.hashring import PhysicalNode, RingConfig, build_ring
from nosqlkit.replication.quorum import WriteMode
from nosqlkit.replication.session import Guarantee, SessionState, session_read, session_write
from nosqlkit.scenario import ScenarioError, run_scenario_file
from nosqlkit.storage import dump_lines

OK, FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _nodes(spec: str) -> list[PhysicalNode]:
    """``3`` for n1..n3, or ``a,b=2,c`` for named nodes with optional weights."""
    if spec.isdigit():
        return [PhysicalNode(f"n{i}") for i in range(1, int(spec) + 1)]
    out = []
    for part in spec.split(","):
        name, _, weight = part.partition("=")
        out.append(PhysicalNode(name.strip(), int(weight) if weight else 1))
    return out


def cmd_ring_dump(args) -> int:
    ring = build_ring(_nodes(args.nodes), RingConfig(partition_count=args.partitions,
                                                     vnodes_per_unit_capacity=args.vnodes))
    sys.stdout.write(ring.dump())
    if args.summary:
        counts = ring.counts()
        print("# " + " ".join(f"{n}={counts[n]}" for n in sorted(counts)), file=sys.stderr)
    return OK


def cmd_store_dump(args) -> int:
    if not Path(args.directory).is_dir():
        raise UsageError(f"{args.directory} is not a directory")
    for line in dump_lines(args.directory):
        print(line)
    return OK


def cmd_scenario_run(args) -> int:
    try:
        result = run_scenario_file(args.file, seed=args.seed)
    except (ScenarioError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from exc
    text = "".join(line + "\n" for line in result.trace)
    if args.trace_out:
        Path(args.trace_out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    for failure in result.failures:
        print(f"FAIL {failure}", file=sys.stderr)
    print(f"{result.steps} steps, {len(result.failures)} failed assertions", file=sys.stderr)
    return OK if result.ok else FAILED


def cmd_bench_run(args) -> int:
    results = []
    for writers in args.writers:
        spec = WorkloadSpec(args.layer, args.records, writers, args.policy,
                            args.value_size, args.seed)
        result = run_bench(spec, read_back=not args.no_read_back)
        results.append(result)
        missing = len(result.acknowledged) - result.read_back if not args.no_read_back else 0
        print(f"{spec.layer} writers={writers} policy={spec.policy.value}: "
              f"{result.ops} ok, {result.errors} errors, lag={result.lag}, "
              f"{result.ops_per_sec:.0f} ops/s"
              + (f", {missing} acknowledged records missing" if missing else ""),
              file=sys.stderr)
    emit_csv(results, args.out if args.out else sys.stdout)
    failed = any(r.errors for r in results) or (
        not args.no_read_back and any(r.read_back != len(r.acknowledged) for r in results))
    return FAILED if failed else OK


def _cluster(args) -> Cluster:
    kw = dict(nodes=args.nodes, seed=args.seed, mode=args.mode)
    if args.data_dir:
        kw.update(backend="log", data_dir=args.data_dir)
    cluster = Cluster(ClusterConfig(**kw))
    n = args.n if args.n is not None else min(3, args.nodes)
    cluster.configure_bucket(args.bucket, n, args.r if args.r is not None else min(2, n),
                             args.w if args.w is not None else min(2, n),
                             WriteMode(args.write_mode))
    # let membership settle (and a primary emerge in leader mode) first
    cluster.advance(args.settle)
    return cluster


def _show(result) -> None:
    if result.absent:
        print(f"(absent)\t{result.context.encode()}")
    for v in result.values:
        print(f"{v.value.decode('utf-8', 'backslashreplace')}\t{v.clock.encode()}")


def cmd_put(args) -> int:
    cluster = _cluster(args)
    session = SessionState("cli", Guarantee(args.session_guarantee),
                           args.via if args.session_guarantee == "session" else None)
    clock = session_write(cluster, session, args.bucket, args.key, args.value, via=args.via)
    print(clock.encode())
    if session.guarantee is not Guarantee.NONE:
        # check the guarantee by reading back within the same session
        _show(session_read(cluster, session, args.bucket, args.key, via=args.via))
    return OK


def cmd_get(args) -> int:
    cluster = _cluster(args)
    session = SessionState("cli", Guarantee(args.session_guarantee),
                           args.via if args.session_guarantee == "session" else None)
    if args.replica or args.read_preference != "primary":
        result = cluster.get(args.bucket, args.key, via=args.via, replica=args.replica,
                             read_preference=args.read_preference)
    else:
        result = session_read(cluster, session, args.bucket, args.key, via=args.via)
    _show(result)
    return OK


def _request_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bucket", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--mode", choices=("quorum", "leader"), default="quorum")
    p.add_argument("--write-mode", choices=("sync", "async"), default="sync")
    p.add_argument("--session-guarantee", choices=[g.value for g in Guarantee], default="none")
    p.add_argument("--nodes", type=int, default=3)
    p.add_argument("--via", help="node that receives the request")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", help="keep node logs here so later commands see the data")
    p.add_argument("--settle", type=int, default=100, help="ticks to run before the request")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nosqlkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="group", required=True)

    ring = sub.add_parser("ring").add_subparsers(dest="action", required=True)
    p = ring.add_parser("dump", help="print partition<TAB>vnode<TAB>node for a fresh ring")
    p.add_argument("--nodes", default="3", help="count, or comma-separated names with =weight")
    p.add_argument("--partitions", type=int, default=64)
    p.add_argument("--vnodes", type=int, default=3, help="vnodes per unit of weight")
    p.add_argument("--summary", action="store_true", help="partition counts on stderr")
    p.set_defaults(func=cmd_ring_dump)

    store = sub.add_parser("store").add_subparsers(dest="action", required=True)
    p = store.add_parser("dump", help="print every record of a log directory")
    p.add_argument("directory")
    p.set_defaults(func=cmd_store_dump)

    scenario = sub.add_parser("scenario").add_subparsers(dest="action", required=True)
    p = scenario.add_parser("run", help="run a scenario file and print its trace")
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-out")
    p.set_defaults(func=cmd_scenario_run)

    bench = sub.add_parser("bench").add_subparsers(dest="action", required=True)
    p = bench.add_parser("run", help="bulk-insert benchmark, CSV on stdout or --out")
    p.add_argument("--layer", choices=LAYERS, default="kv")
    p.add_argument("--records", type=int, default=1000)
    p.add_argument("--writers", type=int, nargs="+", default=[1])
    p.add_argument("--policy", choices=("single", "balanced"), default="single")
    p.add_argument("--value-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--no-read-back", action="store_true")
    p.set_defaults(func=cmd_bench_run)

    p = sub.add_parser("put", help="write one key through a simulated cluster")
    _request_options(p)
    p.add_argument("--value", required=True)
    p.set_defaults(func=cmd_put)

    p = sub.add_parser("get", help="read one key through a simulated cluster")
    _request_options(p)
    p.add_argument("--replica", help="read this replica only")
    p.add_argument("--read-preference", choices=("primary", "secondary"), default="primary")
    p.set_defaults(func=cmd_get)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"nosqlkit: {exc}", file=sys.stderr)
        return USAGE
    except (NoSQLKitError, OSError) as exc:
        print(f"nosqlkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
