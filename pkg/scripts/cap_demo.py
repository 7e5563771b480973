"""Partition a three-node cluster and compare strict and relaxed quorums.

With r=w=2 the minority side refuses writes and reads stay current; with
r=w=1 both sides accept writes, reads can be stale, and the two sides end up
with siblings that anti-entropy carries everywhere after the heal.
"""

from __future__ import annotations

from nosqlkit.cluster import Cluster
from nosqlkit.errors import NoSQLKitError


def run(r: int, w: int) -> None:
    print(f"--- n=3 r={r} w={w}")
    c = Cluster(seed=1)
    c.configure_bucket("cars", n=3, r=r, w=w)
    c.advance(20)
    clock = c.put("cars", "punto", "benzina")
    c.partition("n1")
    c.advance(60)
    for via, value in (("n1", "gpl"), ("n2", "metano")):
        try:
            c.put("cars", "punto", value, clock, via=via)
            print(f"write {value!r} via {via}: accepted")
        except NoSQLKitError as exc:
            print(f"write {value!r} via {via}: refused ({type(exc).__name__})")
    for via in ("n1", "n3"):
        try:
            got = [v.value.decode() for v in c.get("cars", "punto", via=via).values]
            print(f"read via {via}: {got}")
        except NoSQLKitError as exc:
            print(f"read via {via}: failed ({type(exc).__name__})")
    c.heal()
    rounds = c.converge()
    state = {m: sorted(v.value.decode() for v in sibs)
             for m, sibs in c.replica_state("cars", "punto").items()}
    print(f"after heal and {rounds} anti-entropy rounds: {state}")


if __name__ == "__main__":
    run(2, 2)
    run(1, 1)
