import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from htgn.graph import BIPARTITE
from htgn.hyperedges import (HyperedgeBuilder, HyperedgeRegistry, RegistryError, Snapshot, default_t_prime,
                             flush_snapshot, ingest_link_bipartite, ingest_link_homogeneous, init_bipartite,
                             memory_footprint, prune_stale_memberships)

from helpers import TG1, TG2, graph_of


def live_sets(reg):
    return sorted(sorted(he.members) for he in reg.live.values())


# -- homogeneous ingestion ---------------------------------------------------


def test_first_link_opens_a_pair():
    reg, snap = HyperedgeRegistry(), Snapshot(b=200)
    pair, merges, _ = ingest_link_homogeneous(reg, snap, 1, 2, 0.0)
    assert sorted(pair.members) == [1, 2] and merges == []
    assert live_sets(reg) == [[1, 2]]


def test_covered_pair_is_not_reopened():
    reg, snap = HyperedgeRegistry(), Snapshot(b=200)
    reg.add((1, 2, 3), 0.0)
    pair, merges, _ = ingest_link_homogeneous(reg, snap, 1, 2, 5.0)
    assert pair is None and merges == []
    assert live_sets(reg) == [[1, 2, 3]]
    assert (1, 2) in snap.edges
    hid = next(iter(reg.live))
    assert reg.recency[(1, hid)] == reg.recency[(2, hid)] == 5.0 and reg.recency[(3, hid)] == 0.0


def test_self_loop_and_range_errors():
    reg, snap = HyperedgeRegistry(num_nodes=3), Snapshot()
    with pytest.raises(ValueError):
        ingest_link_homogeneous(reg, snap, 1, 1, 0.0)
    with pytest.raises(IndexError):
        ingest_link_homogeneous(reg, snap, 1, 3, 0.0)


def test_two_triangles_versus_hexagon():
    for ev, want in ((TG1, 2), (TG2, 0)):
        b = HyperedgeBuilder(num_nodes=6, b=6).run(graph_of(ev))
        assert sum(len(he.members) == 3 for he in b.registry.live.values()) == want
    b = HyperedgeBuilder(num_nodes=6, b=6).run(graph_of(TG1))
    assert live_sets(b.registry) == [[0, 1, 2], [3, 4, 5]]


def test_path_snapshot_has_no_merges():
    reg, snap = HyperedgeRegistry(), Snapshot(b=None)
    for u, v, t in ((1, 2, 0.0), (2, 3, 1.0)):
        ingest_link_homogeneous(reg, snap, u, v, t)
    assert flush_snapshot(reg, snap, 2.0) == []
    assert live_sets(reg) == [[1, 2], [2, 3]]


def test_triangle_flush_absorbs_three_pairs():
    reg, snap = HyperedgeRegistry(), Snapshot(b=None)
    for u, v, t in ((1, 2, 0.0), (2, 3, 1.0), (1, 3, 2.0)):
        ingest_link_homogeneous(reg, snap, u, v, t)
    old_slots = sorted(he.slot for he in reg.live.values())
    merges = flush_snapshot(reg, snap, 3.0)
    assert len(merges) == 1
    m = merges[0]
    assert sorted(m.new_members) == [1, 2, 3]
    assert sorted(a[1] for a in m.absorbed) == old_slots
    assert live_sets(reg) == [[1, 2, 3]]
    assert m.assigned_slot in old_slots  # freed slots are recycled
    assert len(reg.slot_pool) == 2
    hid = next(iter(reg.live))
    assert [reg.recency[(n, hid)] for n in (1, 2, 3)] == [2.0, 1.0, 2.0]


def test_clique_equal_to_live_hyperedge_is_refreshed():
    reg, snap = HyperedgeRegistry(), Snapshot(b=None)
    reg.add((1, 2, 3), 0.0)
    for u, v, t in ((1, 2, 1.0), (2, 3, 2.0), (1, 3, 3.0)):
        ingest_link_homogeneous(reg, snap, u, v, t)
    merges = flush_snapshot(reg, snap, 4.0)
    assert len(merges) == 1 and len(merges[0].absorbed) == 1
    assert live_sets(reg) == [[1, 2, 3]]


def test_clique_inside_a_larger_hyperedge_is_skipped():
    reg, snap = HyperedgeRegistry(), Snapshot(b=None)
    reg.add((1, 2, 3, 4), 0.0)
    for u, v, t in ((1, 2, 1.0), (2, 3, 2.0), (1, 3, 3.0)):
        ingest_link_homogeneous(reg, snap, u, v, t)
    assert flush_snapshot(reg, snap, 4.0) == []
    assert live_sets(reg) == [[1, 2, 3, 4]]


def test_partial_overlap_is_left_alone():
    reg, snap = HyperedgeRegistry(), Snapshot(b=None)
    reg.add((3, 9), 0.0)
    for u, v, t in ((1, 2, 1.0), (2, 3, 2.0), (1, 3, 3.0)):
        ingest_link_homogeneous(reg, snap, u, v, t)
    flush_snapshot(reg, snap, 4.0)
    assert live_sets(reg) == [[1, 2, 3], [3, 9]]
    assert len(reg.membership[3]) == 2


def test_false_clique_appears_in_its_own_later_snapshot():
    # three disjoint triangles, then cross links among one node of each
    early = [(1, 2, 0.0), (2, 4, 0.1), (1, 4, 0.2), (3, 5, 0.3), (5, 6, 0.4), (3, 6, 0.5),
             (7, 8, 0.6), (8, 9, 0.7), (7, 9, 0.8)]
    late = [(1, 3, 10.0), (1, 8, 10.1), (3, 8, 10.2)]
    b = HyperedgeBuilder(num_nodes=10, b=9).run(graph_of(early + late, num_nodes=10))
    flushes = {}
    for m in b.merge_log:
        flushes.setdefault(m.time, []).append(tuple(sorted(m.new_members)))
    assert sorted(flushes) == [0.8, 10.2]
    assert sorted(flushes[0.8]) == [(1, 2, 4), (3, 5, 6), (7, 8, 9)]
    assert flushes[10.2] == [(1, 3, 8)]


def test_false_clique_needs_a_shared_snapshot():
    # triangles {1,2,3}, {3,4,8}, {1,7,8} together also close {1,3,8}
    tris = [(1, 2, 3), (3, 4, 8), (1, 7, 8)]
    events, t = [], 0.0
    for a, b_, c in tris:
        for x, y in ((a, b_), (b_, c), (a, c)):
            events.append((x, y, t))
            t += 1.0
    g = graph_of(events, num_nodes=9)
    shared = HyperedgeBuilder(num_nodes=9, b=9).run(g)
    assert [1, 3, 8] in live_sets(shared.registry)
    separate = HyperedgeBuilder(num_nodes=9, b=3).run(g)
    assert live_sets(separate.registry) == [[1, 2, 3], [1, 7, 8], [3, 4, 8]]


def test_window_snapshot_flushes_before_late_link():
    b = HyperedgeBuilder(num_nodes=4, b=None, window=1.0)
    for u, v, t in ((0, 1, 0.0), (1, 2, 0.5), (0, 2, 0.9)):
        b.ingest(u, v, t)
    delta = b.ingest(2, 3, 5.0)
    assert delta.n_before == 1 and sorted(delta.merges[0].new_members) == [0, 1, 2]
    assert sorted(delta.new_pair.members) == [2, 3]


def test_finish_flushes_trailing_snapshot():
    b = HyperedgeBuilder(num_nodes=3, b=200)
    for u, v, t in ((0, 1, 0.0), (1, 2, 1.0), (0, 2, 2.0)):
        b.ingest(u, v, t)
    assert len(b.registry.live) == 3
    b.finish(2.0)
    assert live_sets(b.registry) == [[0, 1, 2]]


def test_pairwise_ablation_never_merges():
    b = HyperedgeBuilder(num_nodes=6, b=6, cliques=False).run(graph_of(TG1))
    assert all(len(he.members) == 2 for he in b.registry.live.values())
    assert b.merge_log == []


def test_corrupted_registry_is_detected():
    reg = HyperedgeRegistry()
    reg.add((1, 2), 0.0)
    reg.add((1, 2, 3), 0.0)
    with pytest.raises(RegistryError, match="antichain"):
        reg.check_invariants()
    reg = HyperedgeRegistry()
    he = reg.add((1, 2), 0.0)
    reg.membership[1].discard(he.id)
    with pytest.raises(RegistryError):
        reg.check_invariants()


# -- bipartite ---------------------------------------------------------------


def bip(n_b=1, cap=15):
    reg = HyperedgeRegistry(BIPARTITE)
    init_bipartite(reg, [100 + i for i in range(n_b)])
    return reg


def test_bipartite_first_member():
    reg = bip()
    d = ingest_link_bipartite(reg, 1, 100, 3.0)
    hid = reg.anchor_of[100]
    assert reg.live[hid].members == {1} and reg.recency[(1, hid)] == 3.0 and d.added == 1


def test_bipartite_capacity_keeps_fresh_members():
    reg = bip()
    for u in range(15):
        ingest_link_bipartite(reg, u, 100, float(u), capacity=15, t_prime=100.0)
    d = ingest_link_bipartite(reg, 99, 100, 20.0, capacity=15, t_prime=100.0)
    assert len(reg.live[reg.anchor_of[100]].members) == 16 and d.evicted is None


def test_bipartite_capacity_evicts_stale_oldest():
    reg = bip()
    for u in range(15):
        ingest_link_bipartite(reg, u, 100, float(u), capacity=15, t_prime=10.0)
    d = ingest_link_bipartite(reg, 99, 100, 20.0, capacity=15, t_prime=10.0)
    members = reg.live[reg.anchor_of[100]].members
    assert d.evicted == 0 and len(members) == 15 and 0 not in members


def test_bipartite_same_side_rejected():
    reg = bip(2)
    with pytest.raises(ValueError):
        ingest_link_bipartite(reg, 101, 100, 0.0)
    with pytest.raises(ValueError):
        ingest_link_bipartite(reg, 1, 5, 0.0)


def test_prune_examples():
    reg = bip()
    assert prune_stale_memberships(reg, 0.0, 1.0) == []
    hid = reg.anchor_of[100]
    ingest_link_bipartite(reg, 1, 100, 10.0)
    assert prune_stale_memberships(reg, 12.0, 2.0) == []  # gap exactly t' is kept
    reg = bip()
    hid = reg.anchor_of[100]
    for u, t in ((1, 9.0), (2, 6.0), (3, 4.0)):  # gaps 1, 4, 6 at t*=10 with t'=2
        ingest_link_bipartite(reg, u, 100, t)
    removed = prune_stale_memberships(reg, 10.0, 2.0)
    assert removed == [(2, hid), (3, hid)]
    assert reg.live[hid].members == {1}
    assert len(reg.live) == 1  # hyperedges themselves stay


def test_bipartite_footprint_is_side_b():
    g = graph_of([(0, 3, 0.0), (1, 3, 1.0), (2, 4, 2.0)], kind=BIPARTITE, side_b=[0, 0, 0, 1, 1])
    b = HyperedgeBuilder(BIPARTITE, 5, side_b_nodes=g.side_b_nodes()).run(g)
    assert memory_footprint(b.registry, 5)[0] == 2


def test_default_t_prime():
    assert default_t_prime([0.0, 1.0, 3.0], capacity=15) == 1.5 * 15
    assert default_t_prime([1.0]) == float("inf")


# -- footprint ---------------------------------------------------------------


def test_disjoint_pairs_footprint():
    ev = [(2 * i, 2 * i + 1, float(i)) for i in range(10)] * 3
    b = HyperedgeBuilder(num_nodes=20).run(graph_of(ev, num_nodes=20))
    assert memory_footprint(b.registry, 20) == (10, 20, 0.5)


def test_single_clique_collapses_to_one_slot():
    n = 8
    ev = [(a, c, float(k)) for k, (a, c) in enumerate((a, c) for a in range(n) for c in range(a + 1, n))]
    b = HyperedgeBuilder(num_nodes=n, b=len(ev)).run(graph_of(ev, num_nodes=n))
    peak, _, ratio = memory_footprint(b.registry, n)
    assert len(b.registry.live) == 1 and peak == len(ev)  # peak measured before the flush


# -- properties --------------------------------------------------------------

streams = st.tuples(
    st.integers(3, 30),
    st.sampled_from([5, 20, 200]),
    st.lists(st.tuples(st.integers(0, 29), st.integers(0, 29), st.floats(0, 3)), max_size=400),
)


def _replay(n, b, rows, debug=False):
    builder = HyperedgeBuilder(num_nodes=n, b=b, debug=debug)
    t = 0.0
    for u, v, dt in rows:
        u, v = u % n, v % n
        if u == v:
            continue
        t += dt
        before = len(builder.registry.live)
        delta = builder.ingest(u, v, t)
        yield builder, u, v, before, delta


@given(streams)
def test_invariants_hold_after_every_link(args):
    n, b, rows = args
    for builder, u, v, before, delta in _replay(n, b, rows, debug=True):
        reg = builder.registry
        assert reg.common(u, v)  # coverage
        freed = sum(len(m.absorbed) for m in delta.merges)
        assert len(reg.live) == before + (delta.new_pair is not None) - freed + len(delta.merges)
        for hid in reg.live:
            assert reg.t_last(hid) == max(reg.recency[(x, hid)] for x in reg.live[hid].members)


@given(streams)
def test_identical_streams_give_identical_dumps(args):
    n, b, rows = args
    dumps = []
    for _ in range(2):
        builder = None
        for builder, *_ in _replay(n, b, rows):
            pass
        dumps.append(builder.registry.dump_lines() if builder else [])
    assert dumps[0] == dumps[1]


@given(st.integers(1, 12), st.integers(1, 8), st.integers(0, 10**6))
def test_bipartite_slot_count_is_fixed(n_b, n_a, seed):
    rng = np.random.default_rng(seed)
    reg = bip(n_b)
    total = len(reg.live) + len(reg.slot_pool)
    t = 0.0
    for _ in range(50):
        t += rng.exponential()
        ingest_link_bipartite(reg, int(rng.integers(n_a)), 100 + int(rng.integers(n_b)), t, capacity=3,
                              t_prime=1.0)
        prune_stale_memberships(reg, t, 2.0)
        reg.check_invariants()
        assert len(reg.live) + len(reg.slot_pool) == total == n_b
