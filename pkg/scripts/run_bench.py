"""Run the bulk-insert sweep over every layer and write one CSV.

    python scripts/run_bench.py --records 10000 --out bench.csv
"""

from __future__ import annotations

import argparse
import sys

from nosqlkit.bench import LAYERS, WorkloadSpec, emit_csv, run_bench


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--records", type=int, default=1000)
    ap.add_argument("--writers", type=int, nargs="+", default=[1, 10, 20])
    ap.add_argument("--layers", nargs="+", choices=LAYERS, default=list(LAYERS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="bench.csv")
    args = ap.parse_args()

    results = []
    for layer in args.layers:
        for writers in args.writers:
            for policy in ("single", "balanced"):
                r = run_bench(WorkloadSpec(layer, args.records, writers, policy, seed=args.seed))
                results.append(r)
                print(f"{layer:5} w={writers:2} {policy:8} lag={r.lag:5} errors={r.errors} "
                      f"read-back {r.read_back}/{len(r.acknowledged)}", file=sys.stderr)
    emit_csv(results, args.out)
    print(f"wrote {len(results)} rows to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
