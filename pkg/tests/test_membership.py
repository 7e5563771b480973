from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nosqlkit.cluster import Cluster, ClusterConfig
from nosqlkit.hashring import PhysicalNode, build_ring
from nosqlkit.membership import GossipConfig, Liveness, MembershipView, gossip_round


def rounds_to_converge(n: int, seed: int) -> int:
    c = Cluster(ClusterConfig(nodes=n, seed=seed, record_trace=False))
    c.advance(7)
    target = c.bump_epoch("n1").epoch
    start, period = c.now, c.config.gossip.period
    while any(node.ring.epoch != target for node in c.nodes.values()):
        c.advance(1)
        assert c.now - start < 50 * period
    return math.ceil((c.now - start) / period)


def test_single_node_sends_nothing():
    view = MembershipView("a", build_ring([PhysicalNode("a")]))
    assert gossip_round(view, 2, random.Random(0)) == []


def test_self_is_always_alive():
    view = MembershipView("a", build_ring([PhysicalNode("a"), PhysicalNode("b")]))
    assert view.status("a", 10**6) is Liveness.ALIVE
    assert view.status("b", 10**6) is Liveness.DEAD


def test_liveness_thresholds():
    cfg = GossipConfig(period=5, suspect_after=3, dead_after=6)
    view = MembershipView("a", build_ring([PhysicalNode("a"), PhysicalNode("b")]), cfg)
    assert view.status("b", 15) is Liveness.ALIVE
    assert view.status("b", 16) is Liveness.SUSPECT
    assert view.status("b", 31) is Liveness.DEAD


def test_merge_takes_higher_epoch_and_max_heartbeats():
    ring = build_ring([PhysicalNode("a"), PhysicalNode("b")])
    a, b = MembershipView("a", ring), MembershipView("b", ring)
    b.heartbeats["b"] = 7
    b.ring = ring.__class__(5, ring.config, ring.nodes, ring.owners)
    assert a.merge(b.digest(), now=3) is True
    assert a.epoch == 5 and a.heartbeats["b"] == 7 and a.last_seen["b"] == 3
    assert b.merge(a.digest(), now=3) is False


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_three_nodes_converge_within_four_rounds(seed):
    assert rounds_to_converge(3, seed) <= 4


@pytest.mark.parametrize("n", range(2, 9))
def test_convergence_is_logarithmic(n):
    bound = math.ceil(math.log2(n)) + 3
    for seed in range(10):
        assert rounds_to_converge(n, seed) <= bound


def test_partitioned_minority_learns_epoch_only_after_heal():
    c = Cluster(ClusterConfig(nodes=5, seed=4, record_trace=False))
    c.partition("n5")
    target = c.bump_epoch("n1").epoch
    c.advance(200)
    assert c.nodes["n5"].ring.epoch < target
    assert all(c.nodes[i].ring.epoch == target for i in ("n1", "n2", "n3", "n4"))
    c.heal()
    c.advance(50)
    assert c.nodes["n5"].ring.epoch == target


def test_crashed_peer_becomes_dead_then_alive_again():
    c = Cluster(ClusterConfig(nodes=3, seed=1, record_trace=False))
    c.advance(20)
    c.crash("n3")
    c.advance(60)
    assert c.nodes["n1"].view.status("n3", c.now) is Liveness.DEAD
    c.recover("n3")
    c.advance(20)
    assert c.nodes["n1"].believes_alive("n3")
