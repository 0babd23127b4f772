"""Maximal clique enumeration for snapshot graphs."""

from typing import Hashable, Iterable

import numpy as np

from .kernels import max_cliques_csr


def enumerate_maximal_cliques(edges: Iterable[tuple[Hashable, Hashable]]) -> list[tuple]:
    """Every maximal clique of the simple undirected graph spanned by ``edges``.

    Vertices are those touched by at least one edge, so each clique has at
    least two members.  Output is sorted by ``(size, members)`` with members
    in ascending order.

    >>> enumerate_maximal_cliques([(1, 2), (2, 3), (1, 3)])
    [(1, 2, 3)]
    """
    verts: dict = {}
    pairs = []
    for a, b in edges:
        if a == b:
            raise ValueError(f"self-loop on vertex {a!r}")
        ia = verts.setdefault(a, len(verts))
        ib = verts.setdefault(b, len(verts))
        pairs.append((ia, ib))
    n = len(verts)
    if n == 0:
        return []
    labels = sorted(verts)
    # relabel so local ids follow label order
    rank = {v: i for i, v in enumerate(labels)}
    remap = np.empty(n, dtype=np.int64)
    for v, i in verts.items():
        remap[i] = rank[v]
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    arr = remap[arr]
    both = np.concatenate([arr, arr[:, ::-1]])
    both = np.unique(both, axis=0)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(both[:, 0], minlength=n), out=indptr[1:])
    flat, offs = max_cliques_csr(indptr, both[:, 1], n)
    out = []
    for i in range(offs.shape[0] - 1):
        members = np.sort(flat[offs[i]:offs[i + 1]])
        out.append(tuple(labels[j] for j in members))
    out.sort(key=lambda c: (len(c), c))
    return out
