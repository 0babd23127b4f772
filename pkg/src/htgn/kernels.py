"""Hot inner loops, each with a numba kernel and a pure numpy/python twin.

The public wrappers (``max_cliques_csr``, ``neighbors_before``,
``segment_sum_cols``) dispatch on :func:`htgn._accel.use_numba`.  Both paths
must return identical results; ``tests/test_kernels.py`` checks that.
"""

import numpy as np

from ._accel import njit, use_numba

# ---------------------------------------------------------------------------
# Maximal cliques: Bron-Kerbosch with pivoting over uint64 bitsets,
# outer loop in degeneracy order.
# ---------------------------------------------------------------------------


@njit
def _popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit
def _degeneracy_order(indptr, indices, n):
    deg = np.empty(n, dtype=np.int64)
    for v in range(n):
        deg[v] = indptr[v + 1] - indptr[v]
    removed = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int64)
    for k in range(n):
        best = -1
        for v in range(n):
            if not removed[v] and (best < 0 or deg[v] < deg[best]):
                best = v
        order[k] = best
        removed[best] = True
        for p in range(indptr[best], indptr[best + 1]):
            w = indices[p]
            if not removed[w]:
                deg[w] -= 1
    return order


@njit
def _max_cliques_numba(indptr, indices, n):
    nw = (n + 63) // 64
    adj = np.zeros((n, nw), dtype=np.uint64)
    for v in range(n):
        for p in range(indptr[v], indptr[v + 1]):
            w = indices[p]
            adj[v, w >> 6] |= np.uint64(1) << np.uint64(w & 63)

    order = _degeneracy_order(indptr, indices, n)
    pos = np.empty(n, dtype=np.int64)
    for k in range(n):
        pos[order[k]] = k

    maxd = n + 2
    P = np.zeros((maxd, nw), dtype=np.uint64)
    X = np.zeros((maxd, nw), dtype=np.uint64)
    C = np.zeros((maxd, nw), dtype=np.uint64)
    R = np.zeros(maxd, dtype=np.int64)

    out = np.empty(256, dtype=np.int64)
    offs = np.empty(64, dtype=np.int64)
    n_out = 0
    n_cl = 0
    offs[0] = 0

    for k in range(n):
        v0 = order[k]
        for w in range(nw):
            P[0, w] = np.uint64(0)
            X[0, w] = np.uint64(0)
        for p in range(indptr[v0], indptr[v0 + 1]):
            w = indices[p]
            if pos[w] > k:
                P[0, w >> 6] |= np.uint64(1) << np.uint64(w & 63)
            else:
                X[0, w >> 6] |= np.uint64(1) << np.uint64(w & 63)
        R[0] = v0
        d = 0
        fresh = True
        while d >= 0:
            if fresh:
                fresh = False
                empty_p = True
                empty_x = True
                for w in range(nw):
                    if P[d, w] != np.uint64(0):
                        empty_p = False
                    if X[d, w] != np.uint64(0):
                        empty_x = False
                if empty_p:
                    if empty_x:
                        # report R[0..d]
                        size = d + 1
                        while n_out + size > out.shape[0]:
                            tmp = np.empty(out.shape[0] * 2, dtype=np.int64)
                            tmp[:n_out] = out[:n_out]
                            out = tmp
                        for i in range(size):
                            out[n_out + i] = R[i]
                        n_out += size
                        n_cl += 1
                        if n_cl + 1 > offs.shape[0]:
                            tmp2 = np.empty(offs.shape[0] * 2, dtype=np.int64)
                            tmp2[: n_cl] = offs[: n_cl]
                            offs = tmp2
                        offs[n_cl] = n_out
                    d -= 1
                    continue
                # pivot: vertex of P|X with most neighbours in P
                best_u = -1
                best_c = -1
                for w in range(nw):
                    word = P[d, w] | X[d, w]
                    while word != np.uint64(0):
                        low = word & (~word + np.uint64(1))
                        b = 0
                        t = low
                        while t > np.uint64(1):
                            t = t >> np.uint64(1)
                            b += 1
                        u = w * 64 + b
                        cnt = 0
                        for ww in range(nw):
                            cnt += _popcount64(P[d, ww] & adj[u, ww])
                        if cnt > best_c:
                            best_c = cnt
                            best_u = u
                        word = word ^ low
                for w in range(nw):
                    C[d, w] = P[d, w] & ~adj[best_u, w]
            # next candidate at this depth
            v = -1
            for w in range(nw):
                word = C[d, w]
                if word != np.uint64(0):
                    low = word & (~word + np.uint64(1))
                    b = 0
                    t = low
                    while t > np.uint64(1):
                        t = t >> np.uint64(1)
                        b += 1
                    v = w * 64 + b
                    C[d, w] = word ^ low
                    break
            if v < 0:
                d -= 1
                continue
            for w in range(nw):
                P[d + 1, w] = P[d, w] & adj[v, w]
                X[d + 1, w] = X[d, w] & adj[v, w]
            bit = np.uint64(1) << np.uint64(v & 63)
            P[d, v >> 6] &= ~bit
            X[d, v >> 6] |= bit
            R[d + 1] = v
            d += 1
            fresh = True
    return out[:n_out].copy(), offs[: n_cl + 1].copy()


def _max_cliques_python(indptr, indices, n):
    adj = [set(indices[indptr[v]:indptr[v + 1]].tolist()) for v in range(n)]
    deg = [len(a) for a in adj]
    removed = [False] * n
    order = []
    for _ in range(n):
        best = min((v for v in range(n) if not removed[v]), key=lambda v: (deg[v], v))
        order.append(best)
        removed[best] = True
        for w in adj[best]:
            if not removed[w]:
                deg[w] -= 1
    pos = {v: k for k, v in enumerate(order)}

    found = []

    def expand(R, P, X):
        if not P:
            if not X:
                found.append(list(R))
            return
        pivot = max(P | X, key=lambda u: (len(P & adj[u]), -u))
        for v in sorted(P - adj[pivot]):
            expand(R + [v], P & adj[v], X & adj[v])
            P = P - {v}
            X = X | {v}

    for v0 in order:
        nb = adj[v0]
        expand([v0], {w for w in nb if pos[w] > pos[v0]}, {w for w in nb if pos[w] < pos[v0]})

    flat = np.array([x for c in found for x in c], dtype=np.int64)
    offs = np.zeros(len(found) + 1, dtype=np.int64)
    np.cumsum([len(c) for c in found], out=offs[1:])
    return flat, offs


def max_cliques_csr(indptr, indices, n):
    """All maximal cliques of a simple graph on vertices ``0..n-1`` given in CSR.

    Returns ``(flat, offsets)``; clique ``i`` is ``flat[offsets[i]:offsets[i+1]]``.
    Isolated vertices come back as singleton cliques.
    """
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(1, dtype=np.int64)
    if use_numba():
        return _max_cliques_numba(indptr, indices, n)
    return _max_cliques_python(indptr, indices, n)


# ---------------------------------------------------------------------------
# Temporal neighbours: most-recent-first distinct partners strictly before t.
# ---------------------------------------------------------------------------


@njit
def _neighbors_numba(indptr, other, times, num_nodes, qu, qt, cap):
    nq = qu.shape[0]
    out_n = np.full((nq, cap), -1, dtype=np.int64)
    out_t = np.zeros((nq, cap), dtype=np.float64)
    counts = np.zeros(nq, dtype=np.int64)
    stamp = np.full(num_nodes, -1, dtype=np.int64)
    for q in range(nq):
        u = qu[q]
        t = qt[q]
        lo = indptr[u]
        hi = indptr[u + 1]
        # first position with times >= t
        a = lo
        b = hi
        while a < b:
            mid = (a + b) // 2
            if times[mid] < t:
                a = mid + 1
            else:
                b = mid
        k = 0
        p = a - 1
        while p >= lo and k < cap:
            w = other[p]
            if stamp[w] != q:
                stamp[w] = q
                out_n[q, k] = w
                out_t[q, k] = times[p]
                k += 1
            p -= 1
        counts[q] = k
    return out_n, out_t, counts


def _neighbors_numpy(indptr, other, times, num_nodes, qu, qt, cap):
    nq = qu.shape[0]
    out_n = np.full((nq, cap), -1, dtype=np.int64)
    out_t = np.zeros((nq, cap), dtype=np.float64)
    counts = np.zeros(nq, dtype=np.int64)
    for q in range(nq):
        lo, hi = indptr[qu[q]], indptr[qu[q] + 1]
        end = lo + np.searchsorted(times[lo:hi], qt[q], side="left")
        rev_o = other[lo:end][::-1]
        rev_t = times[lo:end][::-1]
        _, first = np.unique(rev_o, return_index=True)
        first = np.sort(first)[:cap]
        k = first.shape[0]
        out_n[q, :k] = rev_o[first]
        out_t[q, :k] = rev_t[first]
        counts[q] = k
    return out_n, out_t, counts


def neighbors_before(indptr, other, times, num_nodes, qu, qt, cap):
    """Batch temporal-neighbour query over a time-sorted CSR adjacency.

    Returns ``(nbr, nbr_time, counts)`` padded to ``cap`` columns with ``-1``.
    """
    qu = np.ascontiguousarray(qu, dtype=np.int64)
    qt = np.ascontiguousarray(qt, dtype=np.float64)
    if use_numba():
        return _neighbors_numba(indptr, other, times, num_nodes, qu, qt, int(cap))
    return _neighbors_numpy(indptr, other, times, num_nodes, qu, qt, int(cap))


# ---------------------------------------------------------------------------
# Column segment sum: out[:, seg[c]] += Y[:, c]
# ---------------------------------------------------------------------------


@njit
def _segment_sum_numba(Y, seg, n):
    d, c = Y.shape
    out = np.zeros((d, n), dtype=np.float64)
    for j in range(c):
        s = seg[j]
        for i in range(d):
            out[i, s] += Y[i, j]
    return out


def _segment_sum_numpy(Y, seg, n):
    out = np.zeros((n, Y.shape[0]), dtype=np.float64)
    np.add.at(out, seg, Y.T)
    return np.ascontiguousarray(out.T)


def segment_sum_cols(Y, seg, n):
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    if use_numba():
        return _segment_sum_numba(Y, seg, int(n))
    return _segment_sum_numpy(Y, seg, int(n))
