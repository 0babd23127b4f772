"""Shared fixtures and independent oracles for the test suite."""

from itertools import combinations

import numpy as np

from htgn import autodiff as ad
from htgn.graph import TemporalGraph
from htgn.model import HTGN, BuilderConfig, MemoryView, ModelConfig, StreamState

# Two 6-node streams that look identical to any pairwise message-passing
# model: TG1 closes two triangles, TG2 closes one hexagon.
TG1 = [(0, 1, 1.0), (3, 4, 1.0), (1, 2, 2.0), (4, 5, 2.0), (2, 0, 3.0), (5, 3, 3.0)]
TG2 = [(0, 1, 1.0), (3, 4, 1.0), (1, 2, 2.0), (4, 5, 2.0), (2, 3, 3.0), (5, 0, 3.0)]

TINY = dict(d_m=8, d_t=4, d_h=6, hidden=5)


def graph_of(events, num_nodes=None, **kw) -> TemporalGraph:
    return TemporalGraph.from_events(events, num_nodes=num_nodes, **kw)


def brute_force_cliques(nodes, edges) -> set:
    """All maximal complete subsets with at least one edge, by exhaustive search."""
    adj = {n: set() for n in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    nodes = sorted(nodes)
    complete = []
    for k in range(len(nodes), 1, -1):
        for sub in combinations(nodes, k):
            if all(b in adj[a] for a, b in combinations(sub, 2)):
                complete.append(frozenset(sub))
    out = set()
    for c in complete:
        if not any(c < d for d in complete):
            out.add(c)
    return out


def run_stream(model: HTGN, events, cliques=True, b=6, seed=3, query_t=None, num_nodes=None):
    """Feed ``events`` through a stream state and embed every node at ``query_t``."""
    g = graph_of(events, num_nodes=num_nodes)
    st = StreamState(g, model.cfg, BuilderConfig(b=b, cliques=cliques), seed=seed)
    with ad.no_grad():
        for i in range(len(g)):
            view = MemoryView(st.bank)
            model.apply_ops(view, st.ingest(i))
            view.persist()
        view = MemoryView(st.bank)
        t = float(g.t[-1]) + 1.0 if query_t is None else query_t
        H = model.embed(st, view, np.arange(g.num_nodes), np.full(g.num_nodes, t)).value
    return H, st


def tiny_model(seed=1, **kw) -> HTGN:
    cfg = dict(TINY)
    cfg.update(kw)
    return HTGN(ModelConfig(**cfg), seed=seed)
