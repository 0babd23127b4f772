"""Streaming hyperedge construction.

Homogeneous streams: every link either lands inside an existing hyperedge
shared by both endpoints or opens a pair hyperedge; every ``b`` links (or
every time window) the snapshot graph is searched for maximal cliques of
three or more nodes, and each clique absorbs the live hyperedges it
contains.

Bipartite streams: one fixed hyperedge per side-B node collects the side-A
nodes that recently interacted with it, with capacity-bounded eviction and
staleness pruning.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cliques import enumerate_maximal_cliques
from .graph import BIPARTITE, HOMOGENEOUS


class RegistryError(RuntimeError):
    """Registry state broke one of its invariants."""


@dataclass
class Hyperedge:
    id: int
    members: set
    slot: int
    created_at: float
    anchor: Optional[int] = None  # side-B node owning a bipartite hyperedge
    touched: float = 0.0

    def __len__(self):
        return len(self.members)


@dataclass
class Snapshot:
    """Simple graph of links seen since the last flush.

    ``b`` flushes on link count, ``window`` on elapsed time since the first
    link of the snapshot; either may be ``None``.
    """

    b: Optional[int] = 200
    window: Optional[float] = None
    edges: dict = field(default_factory=dict)  # (lo, hi) -> last time
    edge_count: int = 0
    start_time: Optional[float] = None

    def add(self, u: int, v: int, t: float):
        key = (u, v) if u < v else (v, u)
        self.edges[key] = t
        self.edge_count += 1
        if self.start_time is None:
            self.start_time = t

    def reset(self):
        self.edges = {}
        self.edge_count = 0
        self.start_time = None

    def expired(self, t: float) -> bool:
        return self.window is not None and self.start_time is not None and t - self.start_time > self.window

    def full(self) -> bool:
        return self.b is not None and self.edge_count >= self.b


@dataclass
class MergeEvent:
    new_members: tuple
    absorbed: list  # (hyperedge id, slot, t[E]) sorted by slot
    assigned_slot: int
    time: float
    new_id: int = -1

    def to_json(self) -> dict:
        return {"t": self.time, "new": list(self.new_members), "absorbed": [a[0] for a in self.absorbed]}


@dataclass
class MembershipDelta:
    hyperedge: int
    added: Optional[int]
    evicted: Optional[int]


class HyperedgeRegistry:
    """Live hyperedges, the node -> hyperedges map and the recency map.

    Memory slots come from a LIFO free-list; ``num_slots`` is the high-water
    mark and ``peak_slots`` the largest number of simultaneously live
    hyperedges.
    """

    def __init__(self, mode: str = HOMOGENEOUS, num_nodes: Optional[int] = None):
        if mode not in (HOMOGENEOUS, BIPARTITE):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.num_nodes = num_nodes
        self.live: dict[int, Hyperedge] = {}
        self.membership: dict[int, set] = {}
        self.recency: dict[tuple[int, int], float] = {}
        self.slot_pool: list[int] = []
        self.num_slots = 0
        self.peak_slots = 0
        self.anchor_of: dict[int, int] = {}
        self._next_id = 0

    # -- slots ---------------------------------------------------------------
    def _claim_slot(self) -> int:
        if self.slot_pool:
            return self.slot_pool.pop()
        self.num_slots += 1
        return self.num_slots - 1

    def _release_slot(self, slot: int):
        self.slot_pool.append(slot)

    # -- hyperedges ----------------------------------------------------------
    def add(self, members, t: float, recency: Optional[dict] = None, anchor=None) -> Hyperedge:
        he = Hyperedge(self._next_id, set(members), self._claim_slot(), t, anchor, t)
        self._next_id += 1
        self.live[he.id] = he
        for n in he.members:
            self.membership.setdefault(n, set()).add(he.id)
            self.recency[(n, he.id)] = t if recency is None else recency[n]
        self.peak_slots = max(self.peak_slots, len(self.live))
        return he

    def remove(self, hid: int) -> Hyperedge:
        he = self.live.pop(hid)
        for n in he.members:
            self._drop_membership(n, hid)
        self._release_slot(he.slot)
        return he

    def _drop_membership(self, n: int, hid: int):
        s = self.membership[n]
        s.discard(hid)
        if not s:
            del self.membership[n]
        del self.recency[(n, hid)]

    def hyperedges_of(self, n: int) -> list[int]:
        """``H[n]`` as a sorted list of hyperedge ids."""
        return sorted(self.membership.get(n, ()))

    def common(self, u: int, v: int) -> set:
        mu = self.membership.get(u)
        mv = self.membership.get(v)
        if not mu or not mv:
            return set()
        return mu & mv

    def t_last(self, hid: int) -> float:
        """``t[E]``: latest member recency (last touch for empty hyperedges)."""
        he = self.live[hid]
        if not he.members:
            return he.touched
        return max(self.recency[(n, hid)] for n in he.members)

    def live_count(self) -> int:
        return len(self.live)

    def check_node(self, n: int):
        if n < 0 or (self.num_nodes is not None and n >= self.num_nodes):
            raise IndexError(f"node id {n} out of range")

    # -- invariants ----------------------------------------------------------
    def check_invariants(self):
        pairs = set()
        for hid, he in self.live.items():
            for n in he.members:
                if hid not in self.membership.get(n, ()):
                    raise RegistryError(f"node {n} in hyperedge {hid} but not in H[{n}]")
                pairs.add((n, hid))
            if self.mode == HOMOGENEOUS and len(he.members) < 2:
                raise RegistryError(f"hyperedge {hid} has {len(he.members)} members")
        for n, hids in self.membership.items():
            if not hids:
                raise RegistryError(f"empty membership set kept for node {n}")
            for hid in hids:
                if hid not in self.live or n not in self.live[hid].members:
                    raise RegistryError(f"H[{n}] lists {hid} which does not contain {n}")
        if set(self.recency) != pairs:
            raise RegistryError("recency map keys differ from membership pairs")
        slots = [he.slot for he in self.live.values()]
        if len(set(slots)) != len(slots):
            raise RegistryError("two live hyperedges share a slot")
        if set(slots) & set(self.slot_pool) or len(set(self.slot_pool)) != len(self.slot_pool):
            raise RegistryError("free list overlaps live slots")
        if len(slots) + len(self.slot_pool) != self.num_slots:
            raise RegistryError("slot accounting broken")
        if self.peak_slots < len(self.live):
            raise RegistryError("peak_slots below live count")
        if self.mode == HOMOGENEOUS:
            self.check_antichain()

    def check_antichain(self):
        for hid, he in self.live.items():
            sup = None
            for n in he.members:
                m = self.membership[n]
                sup = set(m) if sup is None else sup & m
            if sup and len(sup) > 1:
                other = sorted(sup - {hid})[0]
                raise RegistryError(
                    f"antichain violated: {sorted(he.members)} within {sorted(self.live[other].members)}")

    # -- serialisation -------------------------------------------------------
    def dump_lines(self) -> list[str]:
        out = []
        for hid in sorted(self.live):
            he = self.live[hid]
            out.append(json.dumps({"id": hid, "members": sorted(int(n) for n in he.members),
                                   "slot": he.slot, "t_last": float(self.t_last(hid))}))
        return out

    def dump(self, path):
        lines = self.dump_lines()
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# homogeneous construction
# ---------------------------------------------------------------------------


def ingest_link_homogeneous(reg: HyperedgeRegistry, snap: Snapshot, u: int, v: int, t: float,
                            cliques: bool = True, on_link=None):
    """Feed one link; returns ``(new pair hyperedge or None, merge events, n_before)``.

    The first ``n_before`` merges come from a window flush that ran before
    the link was added; the rest from a flush the link itself triggered.
    ``on_link()`` runs between the two, when the link is in place but the
    second flush has not happened yet.

    A pair hyperedge is opened unless ``u`` and ``v`` already share a live
    hyperedge.  The snapshot flushes when it holds ``b`` links, or, in window
    mode, before a link that falls outside the current window.
    """
    if u == v:
        raise ValueError(f"self-loop ({u}, {v}) rejected")
    reg.check_node(u)
    reg.check_node(v)
    merges = []
    if snap.expired(t):
        merges.extend(flush_snapshot(reg, snap, t, cliques))
    n_before = len(merges)
    shared = reg.common(u, v)
    new_pair = None
    if shared:
        for hid in shared:
            reg.recency[(u, hid)] = t
            reg.recency[(v, hid)] = t
            reg.live[hid].touched = t
    else:
        new_pair = reg.add((u, v), t)
    snap.add(u, v, t)
    if on_link is not None:
        on_link()
    if snap.full():
        merges.extend(flush_snapshot(reg, snap, t, cliques))
    return new_pair, merges, n_before


def flush_snapshot(reg: HyperedgeRegistry, snap: Snapshot, t_star: float, cliques: bool = True):
    """Turn the snapshot's maximal cliques (3+ nodes) into hyperedges.

    Each clique ``c`` absorbs every live hyperedge whose members lie inside
    ``c``.  A clique already strictly contained in a live hyperedge is left
    alone so that no stored member set nests inside another.
    """
    merges = []
    if cliques and snap.edges:
        found = [c for c in enumerate_maximal_cliques(snap.edges) if len(c) >= 3]
        last_edge = {}
        for (a, b), te in snap.edges.items():
            last_edge.setdefault(a, {})[b] = te
            last_edge.setdefault(b, {})[a] = te
        for c in found:
            merges_c = _absorb_clique(reg, c, t_star, last_edge)
            if merges_c is not None:
                merges.append(merges_c)
    snap.reset()
    return merges


def _absorb_clique(reg, c, t_star, last_edge):
    cset = frozenset(c)
    containing = None
    touching = set()
    for n in c:
        m = reg.membership.get(n, set())
        touching |= m
        containing = set(m) if containing is None else containing & m
    for hid in containing or ():
        if len(reg.live[hid].members) > len(cset):
            return None
    absorbed_ids = [hid for hid in touching if reg.live[hid].members <= cset]
    absorbed = sorted(((hid, reg.live[hid].slot, reg.t_last(hid)) for hid in absorbed_ids),
                      key=lambda a: a[1])
    rec = {}
    for n in c:
        times = [te for w, te in last_edge.get(n, {}).items() if w in cset]
        times.extend(reg.recency[(n, hid)] for hid in absorbed_ids if (n, hid) in reg.recency)
        rec[n] = max(times) if times else t_star
    for hid in absorbed_ids:
        reg.remove(hid)
    he = reg.add(c, t_star, rec)
    he.touched = t_star
    return MergeEvent(tuple(c), absorbed, he.slot, t_star, he.id)


# ---------------------------------------------------------------------------
# bipartite construction
# ---------------------------------------------------------------------------


def init_bipartite(reg: HyperedgeRegistry, side_b_nodes) -> HyperedgeRegistry:
    """One empty hyperedge (and memory slot) per side-B node."""
    if reg.mode != BIPARTITE:
        raise ValueError("registry is not in bipartite mode")
    for v in sorted(int(x) for x in side_b_nodes):
        he = reg.add((), 0.0, anchor=v)
        reg.anchor_of[v] = he.id
    return reg


def ingest_link_bipartite(reg: HyperedgeRegistry, u: int, v: int, t: float, capacity: int = 15,
                          t_prime: float = float("inf")) -> MembershipDelta:
    """Add side-A node ``u`` to ``E[v]``; evict the stalest member past ``capacity``."""
    if v not in reg.anchor_of:
        raise ValueError(f"node {v} is not a side-B node")
    if u in reg.anchor_of:
        raise ValueError(f"nodes {u} and {v} are on the same side")
    reg.check_node(u)
    hid = reg.anchor_of[v]
    he = reg.live[hid]
    added = None
    if u not in he.members:
        he.members.add(u)
        reg.membership.setdefault(u, set()).add(hid)
        added = u
    reg.recency[(u, hid)] = t
    he.touched = t
    evicted = None
    if len(he.members) > capacity:
        o = min(he.members, key=lambda n: (reg.recency[(n, hid)], n))
        if t - reg.recency[(o, hid)] > t_prime:
            he.members.discard(o)
            reg._drop_membership(o, hid)
            evicted = o
    return MembershipDelta(hid, added, evicted)


def prune_stale_memberships(reg: HyperedgeRegistry, t_star: float, t_prime: float):
    """Drop every membership with ``t_star - t[n, E] > t_prime``; hyperedges stay."""
    if reg.mode != BIPARTITE:
        raise ValueError("pruning applies to bipartite registries only")
    stale = sorted(key for key, tn in reg.recency.items() if t_star - tn > t_prime)
    for n, hid in stale:
        reg.live[hid].members.discard(n)
        reg._drop_membership(n, hid)
    return stale


def default_t_prime(times, capacity: int = 15) -> float:
    """Median inter-event gap times ``capacity`` (``inf`` for < 2 events)."""
    times = np.asarray(times, dtype=np.float64)
    if times.shape[0] < 2:
        return float("inf")
    return float(np.median(np.diff(times)) * capacity)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class StructureDelta:
    new_pair: Optional[Hyperedge] = None
    merges: list = field(default_factory=list)
    n_before: int = 0  # merges[:n_before] happened before the link was added
    membership: Optional[MembershipDelta] = None


class HyperedgeBuilder:
    """Registry + snapshot driven one link at a time.

    ``cliques=False`` gives the pairwise ablation: pair hyperedges only,
    never merged.  ``debug=True`` re-checks every registry invariant after
    each mutation.
    """

    def __init__(self, mode: str = HOMOGENEOUS, num_nodes: Optional[int] = None, b: Optional[int] = 200,
                 window: Optional[float] = None, capacity: int = 15, t_prime: float = float("inf"),
                 cliques: bool = True, side_b_nodes=None, debug: bool = False):
        self.mode = mode
        self.registry = HyperedgeRegistry(mode, num_nodes)
        self.snapshot = Snapshot(b, window)
        self.capacity = capacity
        self.t_prime = t_prime
        self.cliques = cliques
        self.debug = debug
        self.merge_log: list[MergeEvent] = []
        if mode == BIPARTITE:
            init_bipartite(self.registry, side_b_nodes if side_b_nodes is not None else ())

    def ingest(self, u: int, v: int, t: float, on_link=None) -> StructureDelta:
        """Feed one link.  ``on_link()`` runs once the link is registered
        (homogeneous: before a flush it triggers; bipartite: after the
        membership update)."""
        if self.mode == HOMOGENEOUS:
            pair, merges, n_before = ingest_link_homogeneous(self.registry, self.snapshot, u, v, t,
                                                             self.cliques, on_link)
            self.merge_log.extend(merges)
            delta = StructureDelta(pair, merges, n_before)
        else:
            delta = StructureDelta(membership=ingest_link_bipartite(
                self.registry, u, v, t, self.capacity, self.t_prime))
            if on_link is not None:
                on_link()
        if self.debug:
            self.registry.check_invariants()
        return delta

    def finish(self, t: float) -> list[MergeEvent]:
        """Flush the trailing partial snapshot (homogeneous only)."""
        if self.mode != HOMOGENEOUS or not self.snapshot.edges:
            self.snapshot.reset()
            return []
        merges = flush_snapshot(self.registry, self.snapshot, t, self.cliques)
        self.merge_log.extend(merges)
        if self.debug:
            self.registry.check_invariants()
        return merges

    def prune(self, t: float):
        if self.mode != BIPARTITE or not np.isfinite(self.t_prime):
            return []
        removed = prune_stale_memberships(self.registry, t, self.t_prime)
        if self.debug:
            self.registry.check_invariants()
        return removed

    def run(self, g, finish: bool = True):
        """Feed a whole graph; self-loops are skipped."""
        for u, v, t in zip(g.src.tolist(), g.dst.tolist(), g.t.tolist()):
            if u != v:
                self.ingest(u, v, t)
        if finish and len(g):
            self.finish(float(g.t[-1]))
        return self

    def write_merge_log(self, path):
        Path(path).write_text("".join(json.dumps(m.to_json()) + "\n" for m in self.merge_log),
                              encoding="utf-8")


def memory_footprint(reg: HyperedgeRegistry, num_nodes: int):
    """``(peak_slots, num_nodes, ratio)``."""
    return reg.peak_slots, num_nodes, (reg.peak_slots / num_nodes if num_nodes else float("nan"))
