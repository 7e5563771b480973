"""Show how a ring divides partitions and how little moves on a join or leave."""

from __future__ import annotations

import argparse

from nosqlkit.hashring import (
    PhysicalNode,
    RingConfig,
    add_node,
    build_ring,
    lookup_partition,
    modulo_shard,
    remove_node,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=3)
    ap.add_argument("--partitions", type=int, default=64)
    ap.add_argument("--keys", type=int, default=1000)
    args = ap.parse_args()

    cfg = RingConfig(partition_count=args.partitions)
    names = [f"n{i}" for i in range(1, args.nodes + 1)]
    ring = build_ring([PhysicalNode(n) for n in names], cfg)
    print("partitions per node:", dict(sorted(ring.counts().items())))
    for n in names:
        print(f"  {n} vnodes:", ring.vnode_counts(n))

    keys = [f"key-{i}".encode() for i in range(args.keys)]
    owner = lambda r, k: r.owners[lookup_partition(k, r)]

    grown, moved = add_node(ring, PhysicalNode("new"))
    changed = sum(owner(ring, k) != owner(grown, k) for k in keys)
    print(f"join: {len(moved)} partitions moved, {changed}/{len(keys)} keys changed owner")

    shrunk, moved = remove_node(ring, names[0])
    changed = sum(owner(ring, k) != owner(shrunk, k) for k in keys)
    print(f"leave: {len(moved)} partitions moved, {changed}/{len(keys)} keys changed owner")

    before = [modulo_shard(i, args.nodes) for i in range(len(keys))]
    after = [modulo_shard(i, args.nodes + 1) for i in range(len(keys))]
    print(f"modulo sharding on join: {sum(a != b for a, b in zip(before, after))}/{len(keys)} keys moved")


if __name__ == "__main__":
    main()
