"""Event streams: loading, chronological splits and temporal neighbour queries."""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .kernels import neighbors_before

HOMOGENEOUS = "homogeneous"
BIPARTITE = "bipartite"


class EventFormatError(ValueError):
    """Raised for malformed event files; carries the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Event:
    src: int
    dst: int
    time: float
    feat: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not (0.0 < f < 1.0) for f in fracs):
            raise ValueError(f"split fractions must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)!r}")


class TemporalGraph:
    """Immutable, time-sorted event stream with columnar storage.

    ``src``/``dst`` are dense node ids ``0..num_nodes-1``.  ``feats`` is
    ``None`` when the source carried no edge features; :meth:`feature` then
    yields zero vectors of length ``d_e``.  For bipartite graphs ``side_b`` is
    a boolean mask over nodes.
    """

    def __init__(self, src, dst, t, num_nodes: int, kind: str = HOMOGENEOUS, d_e: int = 0,
                 feats=None, side_b=None, id_map=None):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.float64)
        self.num_nodes = int(num_nodes)
        self.kind = kind
        self.d_e = int(d_e)
        self.feats = None if feats is None else np.asarray(feats, dtype=np.float64)
        self.side_b = None if side_b is None else np.asarray(side_b, dtype=bool)
        self.id_map = (np.arange(self.num_nodes, dtype=np.int64) if id_map is None
                       else np.asarray(id_map, dtype=np.int64))
        self._index = None
        self._validate()
        for arr in (self.src, self.dst, self.t, self.id_map):
            arr.flags.writeable = False

    def _validate(self):
        n = self.src.shape[0]
        if not (self.dst.shape[0] == n == self.t.shape[0]):
            raise ValueError("src, dst and t must have equal length")
        if self.kind not in (HOMOGENEOUS, BIPARTITE):
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if n:
            if np.any(np.diff(self.t) < 0):
                raise ValueError("events must be sorted by time")
            if self.t[0] < 0:
                raise ValueError("negative timestamp")
            if max(self.src.max(), self.dst.max()) >= self.num_nodes or min(self.src.min(), self.dst.min()) < 0:
                raise ValueError("node id out of range")
        if self.feats is not None and self.feats.shape != (n, self.d_e):
            raise ValueError(f"feature matrix must be ({n}, {self.d_e}), got {self.feats.shape}")
        if self.kind == BIPARTITE:
            if self.side_b is None or self.side_b.shape[0] != self.num_nodes:
                raise ValueError("bipartite graph needs a side_b mask over all nodes")
            if n and (self.side_b[self.src].any() or not self.side_b[self.dst].all()):
                raise ValueError("bipartite events must go from side-A to side-B")

    def __len__(self):
        return self.src.shape[0]

    def __repr__(self):
        return f"TemporalGraph(kind={self.kind}, events={len(self)}, nodes={self.num_nodes}, d_e={self.d_e})"

    def feature(self, i: int) -> np.ndarray:
        if self.feats is None:
            return np.zeros(self.d_e)
        return self.feats[i]

    @property
    def events(self) -> list[Event]:
        return [Event(int(s), int(d), float(t), None if self.feats is None else self.feats[i])
                for i, (s, d, t) in enumerate(zip(self.src, self.dst, self.t))]

    def slice(self, lo: int, hi: int) -> "TemporalGraph":
        """Events ``lo:hi`` sharing this graph's id space and partition."""
        return TemporalGraph(self.src[lo:hi], self.dst[lo:hi], self.t[lo:hi], self.num_nodes,
                             self.kind, self.d_e, None if self.feats is None else self.feats[lo:hi],
                             self.side_b, self.id_map)

    def side_b_nodes(self) -> np.ndarray:
        if self.side_b is None:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.side_b)

    @property
    def neighbor_index(self) -> "NeighborIndex":
        if self._index is None:
            self._index = NeighborIndex(self)
        return self._index

    @classmethod
    def from_events(cls, events: Sequence[Event] | Sequence[tuple], num_nodes=None, kind=HOMOGENEOUS,
                    d_e: int = 0, side_b=None) -> "TemporalGraph":
        """Build from already-dense ids; events are stably sorted by time."""
        rows = [e if isinstance(e, Event) else Event(*e) for e in events]
        order = sorted(range(len(rows)), key=lambda i: rows[i].time)
        rows = [rows[i] for i in order]
        src = [e.src for e in rows]
        dst = [e.dst for e in rows]
        t = [e.time for e in rows]
        if num_nodes is None:
            num_nodes = max(src + dst) + 1 if rows else 0
        feats = None
        if any(e.feat is not None for e in rows):
            feats = np.zeros((len(rows), d_e))
            for i, e in enumerate(rows):
                if e.feat is not None:
                    feats[i] = e.feat
        return cls(src, dst, t, num_nodes, kind, d_e, feats, side_b)


def load_events(path, kind: str = HOMOGENEOUS, d_e: Optional[int] = None, side_b_path=None,
                dst_is_side_b: bool = True) -> TemporalGraph:
    """Parse an event CSV (``src,dst,t[,f1..fd]``) into a :class:`TemporalGraph`.

    Raw ids are compacted to ``0..n-1`` in ascending raw-id order; the
    original ids are kept in ``graph.id_map``.  Events are stably sorted by
    time.  ``d_e=None`` takes the feature width from the header.

    For bipartite files side-B is read from a JSON sidecar
    (``{"side_B": [...]}``) when ``side_b_path`` is given, otherwise every
    destination id is side-B.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return TemporalGraph([], [], [], 0, kind, d_e or 0,
                             side_b=np.zeros(0, dtype=bool) if kind == BIPARTITE else None)
    reader = csv.reader(text.splitlines())
    header = [h.strip() for h in next(reader)]
    if len(header) < 3 or header[:3] != ["src", "dst", "t"]:
        raise EventFormatError(f"header must start with src,dst,t; got {','.join(header)}", 1)
    n_feat_cols = len(header) - 3
    if d_e is None:
        d_e = n_feat_cols
    src, dst, ts, feats = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 3:
            raise EventFormatError(f"expected at least 3 fields, got {len(row)}", lineno)
        try:
            s, d = int(row[0]), int(row[1])
            t = float(row[2])
        except ValueError as exc:
            raise EventFormatError(f"cannot parse row: {exc}", lineno) from None
        if s < 0 or d < 0:
            raise EventFormatError("node ids must be non-negative", lineno)
        if not math.isfinite(t):
            raise EventFormatError("timestamp must be finite", lineno)
        if t < 0:
            raise EventFormatError(f"negative timestamp {t}", lineno)
        f = row[3:]
        if n_feat_cols:
            if len(f) != d_e:
                raise EventFormatError(f"expected {d_e} features, got {len(f)}", lineno)
            try:
                feats.append([float(x) for x in f])
            except ValueError as exc:
                raise EventFormatError(f"bad feature value: {exc}", lineno) from None
        elif f:
            raise EventFormatError(f"row has {len(f)} feature values but header declares none", lineno)
        src.append(s)
        dst.append(d)
        ts.append(t)
    if n_feat_cols and n_feat_cols != d_e:
        raise EventFormatError(f"header declares {n_feat_cols} features, expected d_e={d_e}", 1)

    src_a = np.asarray(src, dtype=np.int64)
    dst_a = np.asarray(dst, dtype=np.int64)
    raw_ids = np.unique(np.concatenate([src_a, dst_a]))
    src_c = np.searchsorted(raw_ids, src_a)
    dst_c = np.searchsorted(raw_ids, dst_a)
    order = np.argsort(np.asarray(ts), kind="stable")

    side_b = None
    if kind == BIPARTITE:
        if side_b_path is not None:
            spec = json.loads(Path(side_b_path).read_text(encoding="utf-8"))
            b_raw = np.asarray(spec["side_B"], dtype=np.int64)
            side_b = np.isin(raw_ids, b_raw)
        elif dst_is_side_b:
            side_b = np.isin(raw_ids, dst_a)
        else:
            raise ValueError("bipartite load needs a side_B sidecar or the dst convention")
        bad_src = np.flatnonzero(side_b[src_c])
        if bad_src.size:
            i = int(bad_src[0])
            raise EventFormatError(f"bipartite violation: node {src_a[i]} appears on both sides", i + 2)
        if not side_b[dst_c].all():
            bad = int(np.flatnonzero(~side_b[dst_c])[0])
            raise EventFormatError(f"bipartite violation: destination {dst_a[bad]} is not side-B", bad + 2)

    fa = np.asarray(feats, dtype=np.float64)[order] if n_feat_cols else None
    return TemporalGraph(src_c[order], dst_c[order], np.asarray(ts)[order], raw_ids.shape[0], kind,
                         d_e, fa, side_b, raw_ids)


def save_events(g: TemporalGraph, path, side_b_path=None, original_ids: bool = False):
    """Write ``g`` as an event CSV (and the side-B sidecar for bipartite graphs)."""
    path = Path(path)
    ids = g.id_map if original_ids else np.arange(g.num_nodes)
    header = ["src", "dst", "t"] + ([f"f{i + 1}" for i in range(g.d_e)] if g.feats is not None else [])
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(g)):
            row = [int(ids[g.src[i]]), int(ids[g.dst[i]]), repr(float(g.t[i]))]
            if g.feats is not None:
                row.extend(repr(float(x)) for x in g.feats[i])
            w.writerow(row)
    if g.kind == BIPARTITE:
        side_b_path = Path(side_b_path) if side_b_path else path.with_suffix(".sides.json")
        side_b_path.write_text(json.dumps({"side_B": [int(ids[i]) for i in g.side_b_nodes()]}))
        return path, side_b_path
    return path, None


def save_id_map(g: TemporalGraph, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "original_id"])
        for i, raw in enumerate(g.id_map):
            w.writerow([i, int(raw)])


def split_bounds(n: int, s: SplitSpec = SplitSpec()) -> tuple[int, int]:
    """Cut points ``floor(n*train)`` and ``floor(n*(train+val))``."""
    if n == 0:
        raise ValueError("cannot split an empty graph")
    a = math.floor(n * s.train_frac)
    b = math.floor(n * (s.train_frac + s.val_frac))
    sizes = (a, b - a, n - b)
    if n >= 3 and min(sizes) == 0:
        raise ValueError(f"split {s} of {n} events leaves an empty part {sizes}")
    return a, b


def chronological_split(g: TemporalGraph, s: SplitSpec = SplitSpec()):
    """Train/validation/test slices in time order."""
    a, b = split_bounds(len(g), s)
    return g.slice(0, a), g.slice(a, b), g.slice(b, len(g))


class NeighborIndex:
    """Per-node, time-sorted adjacency (both directions) for causal queries."""

    def __init__(self, g: TemporalGraph):
        n_ev = len(g)
        nodes = np.concatenate([g.src, g.dst])
        other = np.concatenate([g.dst, g.src])
        times = np.concatenate([g.t, g.t])
        eidx = np.concatenate([np.arange(n_ev), np.arange(n_ev)])
        order = np.lexsort((eidx, times, nodes))
        self.num_nodes = g.num_nodes
        self.other = np.ascontiguousarray(other[order])
        self.times = np.ascontiguousarray(times[order])
        self.indptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(nodes, minlength=g.num_nodes), out=self.indptr[1:])

    def query(self, us, ts, cap: int):
        us = np.asarray(us, dtype=np.int64)
        if us.size and (us.min() < 0 or us.max() >= self.num_nodes):
            raise IndexError("node id out of range")
        return neighbors_before(self.indptr, self.other, self.times, self.num_nodes, us, ts, cap)


def temporal_neighbors(g: TemporalGraph, u: int, t: float, cap: int = 20) -> list[tuple[int, float]]:
    """Distinct partners of ``u`` strictly before ``t``, most recent first."""
    if not 0 <= u < g.num_nodes:
        raise IndexError(f"node {u} out of range for a graph with {g.num_nodes} nodes")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if t < 0:
        raise ValueError("t must be non-negative")
    cap = int(min(cap, max(g.num_nodes, 1)))
    nbr, nt, cnt = g.neighbor_index.query([u], [t], cap)
    k = int(cnt[0])
    return [(int(nbr[0, i]), float(nt[0, i])) for i in range(k)]
