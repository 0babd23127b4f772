"""Hyperedge memory, hypergraph-convolution embeddings and link predictors.

Memory lives in a :class:`MemoryBank` of slot vectors.  Structural changes
(new pair hyperedges, merges, interactions) are logged as ops by
:class:`StreamState` and applied by :meth:`HTGN.apply_ops`, which groups
independent ops into levels so that each level runs as one batched,
differentiable computation.
"""

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import BIPARTITE, HOMOGENEOUS, TemporalGraph
from .hyperedges import HyperedgeBuilder, RegistryError

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    mode: str = HOMOGENEOUS
    d_m: int = 175  # memory width
    d_t: int = 100  # time-encoding width
    d_h: int = 100  # node-embedding width
    hidden: int = 100  # hidden width of the merge and link MLPs
    d_e: int = 0  # link-feature width
    layers: int = 2
    neighbor_cap: int = 20
    hyperedge_cap: Optional[int] = None  # most recent hyperedges per node in layer 1; None = all
    alpha: float = 2.0
    beta: float = 1e-4

    def validate(self):
        if self.mode not in (HOMOGENEOUS, BIPARTITE):
            raise ValueError(f"unknown mode {self.mode!r}")
        for k in ("d_m", "d_t", "d_h", "hidden", "layers", "neighbor_cap"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1")
        if self.d_e < 0:
            raise ValueError("d_e must be >= 0")
        if self.hyperedge_cap is not None and self.hyperedge_cap < 1:
            raise ValueError("hyperedge_cap must be >= 1 or None")
        if not self.alpha > 0 or self.beta < 0:
            raise ValueError("alpha must be > 0 and beta >= 0")
        return self

    @property
    def d_msg(self) -> int:
        return 2 * self.d_m + self.d_t + self.d_e + 1


def decay_weight(alpha: float, beta: float, gap) -> np.ndarray:
    """``alpha ** (-beta * gap)`` for non-negative gaps."""
    gap = np.asarray(gap, dtype=np.float64)
    if np.any(gap < 0):
        raise ValueError("decay gap must be non-negative")
    return np.power(alpha, -beta * gap)


# ---------------------------------------------------------------------------
# memory
# ---------------------------------------------------------------------------


class MemoryBank:
    """``z x d_m`` slot matrix with per-slot update times and occupancy."""

    def __init__(self, d_m: int, z: int = 0):
        self.d_m = d_m
        self.slots = np.zeros((z, d_m))
        self.last_update = np.zeros(z)
        self.live = np.zeros(z, dtype=bool)

    @property
    def z(self) -> int:
        return self.slots.shape[0]

    def ensure(self, z: int):
        if z > self.z:
            grow = max(z, 2 * self.z)
            slots = np.zeros((grow, self.d_m))
            slots[: self.z] = self.slots
            lu = np.zeros(grow)
            lu[: self.z] = self.last_update
            live = np.zeros(grow, dtype=bool)
            live[: self.z] = self.live
            self.slots, self.last_update, self.live = slots, lu, live

    def reset(self):
        self.slots[:] = 0.0
        self.last_update[:] = 0.0
        self.live[:] = False


_ZERO = object()


class MemoryView:
    """Batch-local overlay on a bank; slot reads may come from taped tensors.

    Every written slot maps to ``(tensor, column)``.  ``persist`` copies the
    current values back into the bank as constants.
    """

    def __init__(self, bank: MemoryBank):
        self.bank = bank
        self.src: dict = {}
        self.times: dict = {}

    def read(self, slots) -> Tensor:
        slots = [int(s) for s in slots]
        k = len(slots)
        if k == 0:
            return Tensor(np.zeros((self.bank.d_m, 0)))
        groups: dict = {}
        for pos, s in enumerate(slots):
            entry = self.src.get(s)
            key = id(entry[0]) if entry is not None and entry is not _ZERO else None
            if entry is _ZERO:
                key = "zero"
            groups.setdefault(key, []).append(pos)
        parts, order = [], []
        for key, poss in groups.items():
            if key is None:
                idx = [slots[p] for p in poss]
                self.bank.ensure(max(idx) + 1)
                parts.append(Tensor(self.bank.slots[idx].T))
            elif key == "zero":
                parts.append(Tensor(np.zeros((self.bank.d_m, len(poss)))))
            else:
                t = self.src[slots[poss[0]]][0]
                parts.append(ad.take_cols(t, [self.src[slots[p]][1] for p in poss]))
            order.extend(poss)
        if len(parts) == 1:
            out = parts[0]
        else:
            out = ad.concat_cols(*parts)
        if order != list(range(k)):
            inv = np.empty(k, dtype=np.int64)
            inv[np.asarray(order)] = np.arange(k)
            out = ad.take_cols(out, inv)
        return out

    def write(self, slots, tensor: Tensor, cols=None, time=None):
        for i, s in enumerate(slots):
            self.src[int(s)] = (tensor, int(cols[i]) if cols is not None else i)
            if time is not None:
                self.times[int(s)] = float(time[i] if np.ndim(time) else time)

    def free(self, slot: int):
        self.src[int(slot)] = _ZERO

    def occupied(self, slot: int) -> bool:
        entry = self.src.get(int(slot))
        if entry is not None:
            return entry is not _ZERO
        return slot < self.bank.z and bool(self.bank.live[slot])

    def persist(self):
        if not self.src:
            return
        self.bank.ensure(max(self.src) + 1)
        for s, entry in self.src.items():
            if entry is _ZERO:
                self.bank.slots[s] = 0.0
                self.bank.live[s] = False
            else:
                self.bank.slots[s] = entry[0].value[:, entry[1]]
                self.bank.live[s] = True
        for s, t in self.times.items():
            self.bank.last_update[s] = t
        self.src.clear()
        self.times.clear()


# ---------------------------------------------------------------------------
# ops logged by the stream state
# ---------------------------------------------------------------------------


@dataclass
class SeedOp:
    slot: int
    time: float

    def touched(self):
        return (self.slot,)


@dataclass
class MergeOp:
    absorbed: list  # (slot, t_E) sorted by slot
    assigned: int
    time: float

    def touched(self):
        return tuple(s for s, _ in self.absorbed) + (self.assigned,)


@dataclass
class InteractOp:
    slot_u: Optional[int]  # None: u uncovered (bipartite fallback)
    slot_v: int
    size_u: int
    size_v: int
    dt: float
    feat: np.ndarray
    time: float

    def touched(self):
        if self.slot_u is None or self.slot_u == self.slot_v:
            return (self.slot_v,)
        return (self.slot_u, self.slot_v)


def schedule_levels(ops) -> list:
    """Group ops into levels; ops in one level touch disjoint slots.

    An op lands one level after the latest earlier op sharing any slot with
    it, which preserves every read/write order of the sequential log.
    """
    last: dict = {}
    levels: list = []
    for op in ops:
        ts = op.touched()
        lv = 1 + max((last.get(s, -1) for s in ts), default=-1)
        for s in ts:
            last[s] = lv
        while len(levels) <= lv:
            levels.append([])
        levels[lv].append(op)
    return levels


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def select_index(seed: int, t: float, side: int, k: int) -> int:
    """Counter-based uniform draw from ``range(k)`` keyed on ``(seed, t, side, k)``.

    Nodes with equally sized choice sets at equal times draw the same rank,
    so the choice never depends on node labels.
    """
    if k <= 1:
        return 0
    tbits = struct.unpack("<Q", struct.pack("<d", float(t)))[0]
    h = _splitmix64(seed & 0xFFFFFFFFFFFFFFFF)
    h = _splitmix64(h ^ tbits)
    h = _splitmix64(h ^ (side * 0x10001 + k))
    return h % k


# ---------------------------------------------------------------------------
# stream state
# ---------------------------------------------------------------------------


@dataclass
class BuilderConfig:
    b: Optional[int] = 200
    window: Optional[float] = None
    capacity: int = 15
    t_prime: Optional[float] = None  # None = infinite
    cliques: bool = True


class StreamState:
    """Structure, memory bank and pending memory ops for one event stream.

    ``graph`` is the whole stream; embeddings only read events strictly
    before their query time.
    """

    def __init__(self, graph: TemporalGraph, model_cfg: ModelConfig, builder_cfg: BuilderConfig = None,
                 seed: int = 0, debug: bool = False):
        self.graph = graph
        self.cfg = model_cfg
        self.bcfg = builder_cfg or BuilderConfig()
        self.seed = seed
        self.debug = debug
        self.bank = MemoryBank(model_cfg.d_m)
        self.reset()

    def reset(self):
        g = self.graph
        tp = float("inf") if self.bcfg.t_prime is None else float(self.bcfg.t_prime)
        side_b = g.side_b_nodes() if self.cfg.mode == BIPARTITE else None
        self.builder = HyperedgeBuilder(self.cfg.mode, g.num_nodes, b=self.bcfg.b, window=self.bcfg.window,
                                        capacity=self.bcfg.capacity, t_prime=tp, cliques=self.bcfg.cliques,
                                        side_b_nodes=side_b, debug=self.debug)
        self.bank = MemoryBank(self.cfg.d_m, max(self.registry.num_slots, 16))
        for he in self.registry.live.values():
            self.bank.live[he.slot] = True
        self.pair_last: dict = {}
        self.pending: list = []
        self.last_time = -math.inf

    @property
    def registry(self):
        return self.builder.registry

    def _feat(self, i: int) -> np.ndarray:
        if self.cfg.d_e == 0:
            return np.zeros(0)
        f = self.graph.feature(i)
        if f.shape[0] != self.cfg.d_e:
            raise ValueError(f"event {i} has {f.shape[0]} features, model expects {self.cfg.d_e}")
        return f

    def _merge_op(self, me) -> MergeOp:
        return MergeOp([(s, te) for _, s, te in me.absorbed], me.assigned_slot, me.time)

    def ingest(self, i: int) -> list:
        """Apply event ``i`` to the structure; returns the memory ops it implies."""
        g = self.graph
        u, v, t = int(g.src[i]), int(g.dst[i]), float(g.t[i])
        if t < self.last_time:
            raise ValueError(f"event {i} at t={t} arrives after t={self.last_time}")
        self.last_time = t
        if u == v:
            return []
        reg = self.registry
        key = (u, v) if u < v else (v, u)
        dt = t - self.pair_last.get(key, t)
        self.pair_last[key] = t
        box = []

        def on_link():
            box.append(self._interaction(u, v, t, dt, i))

        delta = self.builder.ingest(u, v, t, on_link)
        ops: list = []
        if self.cfg.mode == HOMOGENEOUS:
            ops.extend(self._merge_op(me) for me in delta.merges[: delta.n_before])
            if delta.new_pair is not None:
                ops.append(SeedOp(delta.new_pair.slot, t))
        ops.extend(box)
        if self.cfg.mode == HOMOGENEOUS:
            ops.extend(self._merge_op(me) for me in delta.merges[delta.n_before:])
        return ops

    def _interaction(self, u, v, t, dt, i) -> InteractOp:
        reg = self.registry
        hu = reg.hyperedges_of(u)
        if self.cfg.mode == BIPARTITE:
            ev = reg.anchor_of[v]
        else:
            hv = reg.hyperedges_of(v)
            ev = hv[select_index(self.seed, t, 1, len(hv))]
        eu = hu[select_index(self.seed, t, 0, len(hu))] if hu else None
        if self.cfg.mode == HOMOGENEOUS and eu is None:
            raise RuntimeError(f"node {u} has no hyperedge after ingesting ({u}, {v}, {t})")
        for n, hid in ((u, eu), (v, ev)):
            if hid is not None and (n, hid) in reg.recency:
                reg.recency[(n, hid)] = t
        he_v = reg.live[ev]
        he_u = reg.live[eu] if eu is not None else None
        return InteractOp(he_u.slot if he_u is not None else None, he_v.slot,
                          len(he_u.members) if he_u is not None else 0, len(he_v.members),
                          dt, self._feat(i), t)

    def finish(self, t: float) -> list:
        return [self._merge_op(me) for me in self.builder.finish(t)]

    def prune(self, t: float):
        self.builder.prune(t)

    def memberships(self, u: int):
        """``[(slot, recency)]`` of the hyperedges node ``u`` reads in layer 1."""
        reg = self.registry
        if self.cfg.mode == BIPARTITE and u in reg.anchor_of:
            he = reg.live[reg.anchor_of[u]]
            return [(he.slot, he.touched)]
        out = [(reg.live[h].slot, reg.recency[(u, h)]) for h in reg.hyperedges_of(u)]
        cap = self.cfg.hyperedge_cap
        if cap is not None and len(out) > cap:
            out = sorted(out, key=lambda e: (-e[1], e[0]))[:cap]
            out.sort()
        return out


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def _glorot(rng, rows, cols):
    a = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


class HTGN:
    """Learnable parameters plus the forward computations that use them."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg.validate()
        rng = np.random.default_rng(seed)
        c = cfg
        p = {}

        def P(name, value):
            p[name] = Tensor(np.ascontiguousarray(value), requires_grad=True, name=name)

        P("time.w", (1.0 / 10 ** np.linspace(0, 9, c.d_t)).reshape(-1, 1))
        P("time.b", np.zeros((c.d_t, 1)))
        P("merge.W1", _glorot(rng, c.hidden, c.d_m))
        P("merge.b1", np.zeros((c.hidden, 1)))
        P("merge.W2", _glorot(rng, c.d_m, c.hidden))
        P("merge.b2", np.zeros((c.d_m, 1)))
        for g in ("r", "z", "n"):
            P(f"gru.Wi{g}", _glorot(rng, c.d_m, c.d_msg))
            P(f"gru.Wh{g}", _glorot(rng, c.d_m, c.d_m))
        P("gru.br", np.zeros((c.d_m, 1)))
        P("gru.bz", np.zeros((c.d_m, 1)))
        P("gru.bin", np.zeros((c.d_m, 1)))
        P("gru.bhn", np.zeros((c.d_m, 1)))
        # summed terms: shrink by the square root of the expected term count
        g1 = 1.0 / math.sqrt(c.neighbor_cap)
        w1 = _glorot(rng, c.d_h, c.d_m + c.d_t) * g1
        P("emb1.Wm", w1[:, : c.d_m])
        P("emb1.Wt", w1[:, c.d_m:])
        for layer in range(2, c.layers + 1):
            w = _glorot(rng, c.d_h, c.d_h + c.d_t) * g1
            P(f"emb{layer}.Wh", w[:, : c.d_h])
            P(f"emb{layer}.Wt", w[:, c.d_h:])
            w2 = _glorot(rng, c.d_h, 2 * c.d_h)
            P(f"emb{layer}.W2s", w2[:, : c.d_h])
            P(f"emb{layer}.W2n", w2[:, c.d_h:])
        P("link.W1", _glorot(rng, c.hidden, c.d_h))
        P("link.b1", np.zeros((c.hidden, 1)))
        P("link.W2", _glorot(rng, 1, c.hidden))
        P("link.b2", np.zeros((1, 1)))
        if c.mode == BIPARTITE:
            P("proj", _glorot(rng, c.d_h, c.d_m))
        self.params = p

    # -- building blocks ---------------------------------------------------

    def time_encode(self, dt) -> Tensor:
        """``cos(w * dt + b)`` for a row of gaps; returns ``d_t x len(dt)``."""
        dt = np.asarray(dt, dtype=np.float64).reshape(1, -1)
        if np.any(dt < 0):
            raise ValueError(f"negative time gap {dt.min()}")
        p = self.params
        return ad.cos(ad.add(ad.matmul(p["time.w"], Tensor(dt)), p["time.b"]))

    def merge_mlp(self, X: Tensor) -> Tensor:
        p = self.params
        h = ad.relu(ad.add(ad.matmul(p["merge.W1"], X), p["merge.b1"]))
        return ad.add(ad.matmul(p["merge.W2"], h), p["merge.b2"])

    def merge(self, X: Tensor, gaps, seg=None, n: int = 1) -> Tensor:
        """Decay-weighted sum of ``merge_mlp`` over the columns of ``X``."""
        c = self.cfg
        w = decay_weight(c.alpha, c.beta, gaps)
        seg = np.zeros(X.shape[1], dtype=np.int64) if seg is None else seg
        return ad.segment_sum(self.merge_mlp(X), seg, n, weights=w)

    def gru(self, x: Tensor, h: Tensor) -> Tensor:
        """``h' = (1 - z) * n + z * h`` with reset gate ``r`` inside ``n``."""
        p = self.params
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(p["gru.Wir"], x), ad.matmul(p["gru.Whr"], h)), p["gru.br"]))
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(p["gru.Wiz"], x), ad.matmul(p["gru.Whz"], h)), p["gru.bz"]))
        hn = ad.add(ad.matmul(p["gru.Whn"], h), p["gru.bhn"])
        n = ad.tanh(ad.add(ad.add(ad.matmul(p["gru.Win"], x), p["gru.bin"]), ad.elemwise_mul(r, hn)))
        return ad.add(ad.add(n, ad.scale(ad.elemwise_mul(z, n), -1.0)), ad.elemwise_mul(z, h))

    def message(self, m_self: Tensor, m_other: Tensor, dt, feat, size) -> Tensor:
        """``m_self || m_other || phi(dt) || e || |E|`` per column."""
        size = Tensor(np.asarray(size, dtype=np.float64).reshape(1, -1))
        feat = Tensor(np.asarray(feat, dtype=np.float64).reshape(self.cfg.d_e, size.shape[1]))
        return ad.concat_rows(m_self, m_other, self.time_encode(dt), feat, size)

    def link_logit(self, x: Tensor) -> Tensor:
        p = self.params
        h = ad.relu(ad.add(ad.matmul(p["link.W1"], x), p["link.b1"]))
        return ad.add(ad.matmul(p["link.W2"], h), p["link.b2"])

    def predict_homogeneous(self, h_u: Tensor, h_v: Tensor) -> Tensor:
        if h_u.shape != h_v.shape or h_u.shape[0] != self.cfg.d_h:
            raise ValueError(f"embedding widths {h_u.shape} and {h_v.shape}, expected {self.cfg.d_h} rows")
        return ad.sigmoid(self.link_logit(ad.elemwise_mul(h_u, h_v)))

    def project(self, m: Tensor) -> Tensor:
        if m.shape[0] != self.cfg.d_m:
            raise ValueError(f"memory width {m.shape[0]}, expected {self.cfg.d_m}")
        return ad.matmul(self.params["proj"], m)

    def predict_bipartite(self, h_u: Tensor, m_v: Tensor) -> Tensor:
        pv = self.project(m_v)
        if h_u.shape != pv.shape:
            raise ValueError(f"widths {h_u.shape} and {pv.shape} differ after projection")
        return ad.sigmoid(self.link_logit(ad.elemwise_mul(h_u, pv)))

    # -- memory ops --------------------------------------------------------

    def seed_value(self) -> Tensor:
        return self.merge_mlp(Tensor(np.zeros((self.cfg.d_m, 1))))

    def apply_ops(self, view: MemoryView, ops):
        """Run a logged op sequence against ``view`` level by level."""
        for level in schedule_levels(ops):
            seeds = [op for op in level if isinstance(op, SeedOp)]
            merges = [op for op in level if isinstance(op, MergeOp)]
            inters = [op for op in level if isinstance(op, InteractOp)]
            if seeds:
                val = self.seed_value()
                view.write([op.slot for op in seeds], val, cols=[0] * len(seeds),
                           time=[op.time for op in seeds])
            if merges:
                self._apply_merges(view, merges)
            if inters:
                self._apply_interactions(view, inters)

    def _apply_merges(self, view, merges):
        slots, gaps, seg = [], [], []
        for j, op in enumerate(merges):
            for s, te in sorted(op.absorbed):  # fixed summation order: slot id
                if not view.occupied(s):
                    raise RegistryError(f"merge at t={op.time} absorbs unoccupied slot {s}")
                slots.append(s)
                gaps.append(op.time - te)
                seg.append(j)
        if slots:
            out = self.merge(view.read(slots), gaps, np.asarray(seg, dtype=np.int64), len(merges))
        else:
            out = Tensor(np.zeros((self.cfg.d_m, len(merges))))
        for op in merges:
            for s, _ in op.absorbed:
                view.free(s)
        view.write([op.assigned for op in merges], out, time=[op.time for op in merges])

    def _apply_interactions(self, view, inters):
        c = self.cfg
        own, other, dts, feats, sizes, targets, times = [], [], [], [], [], [], []
        for op in inters:
            su = op.slot_u
            if su is None:
                # u uncovered: only the v side moves, reading zeros for u
                own.append(op.slot_v)
                other.append(None)
                sizes.append(op.size_v)
                targets.append(op.slot_v)
            elif su == op.slot_v:
                own.append(su)
                other.append(su)
                sizes.append(op.size_u)
                targets.append(su)
            else:
                own.extend((su, op.slot_v))
                other.extend((op.slot_v, su))
                sizes.extend((op.size_u, op.size_v))
                targets.extend((su, op.slot_v))
            k = 1 if su is None or su == op.slot_v else 2
            dts.extend([op.dt] * k)
            feats.extend([op.feat] * k)
            times.extend([op.time] * k)
        m_own = view.read(own)
        known = [i for i, s in enumerate(other) if s is not None]
        if len(known) == len(other):
            m_other = view.read(other)
        else:
            m_known = view.read([other[i] for i in known])
            pad = Tensor(np.zeros((c.d_m, len(other) - len(known))))
            order = np.empty(len(other), dtype=np.int64)
            missing = [i for i, s in enumerate(other) if s is None]
            order[known] = np.arange(len(known))
            order[missing] = len(known) + np.arange(len(missing))
            m_other = ad.take_cols(ad.concat_cols(m_known, pad), order)
        F = np.stack(feats, axis=1) if c.d_e else np.zeros((0, len(own)))
        x = self.message(m_own, m_other, dts, F, sizes)
        view.write(targets, self.gru(x, m_own), time=times)

    # -- embeddings --------------------------------------------------------

    def embed(self, state: StreamState, view: MemoryView, nodes, times, strict: bool = False) -> Tensor:
        """Node embeddings (``d_h x Q``) at the given query times.

        ``strict=True`` asserts that every memory input carries a time
        strictly before its query time.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        keys = np.stack([nodes.astype(np.float64), times], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        if uniq.shape[0] == nodes.shape[0]:
            return self._embed(state, view, nodes, times, self.cfg.layers, strict)
        H = self._embed(state, view, uniq[:, 0].astype(np.int64), uniq[:, 1], self.cfg.layers, strict)
        return ad.take_cols(H, inv.reshape(-1))

    def _layer1(self, state, view, nodes, times, strict):
        p = self.params
        d_h = self.cfg.d_h
        q_idx, slots, gaps = [], [], []
        for q, (u, t) in enumerate(zip(nodes.tolist(), times.tolist())):
            for s, rec in state.memberships(u):
                gap = t - rec
                if gap < 0 or (strict and gap <= 0):
                    raise AssertionError(f"memory of node {u} at t={rec} read for a query at t={t}")
                q_idx.append(q)
                slots.append(s)
                gaps.append(gap)
        Q = nodes.shape[0]
        if not slots:
            return Tensor(np.zeros((d_h, Q)))
        uniq, inv = np.unique(np.asarray(slots, dtype=np.int64), return_inverse=True)
        pm = ad.matmul(p["emb1.Wm"], view.read(uniq))
        pre = ad.add(ad.take_cols(pm, inv), ad.matmul(p["emb1.Wt"], self.time_encode(gaps)))
        return ad.relu(ad.segment_sum(pre, np.asarray(q_idx, dtype=np.int64), Q))

    def _embed(self, state, view, nodes, times, layer, strict):
        if layer == 1:
            return self._layer1(state, view, nodes, times, strict)
        p = self.params
        Q = nodes.shape[0]
        nbr, nbr_t, counts = state.graph.neighbor_index.query(nodes, times, self.cfg.neighbor_cap)
        mask = nbr >= 0
        q_idx = np.nonzero(mask)[0]
        jn = nbr[mask]
        jt = times[q_idx]
        dt = jt - nbr_t[mask]
        all_n = np.concatenate([nodes, jn])
        all_t = np.concatenate([times, jt])
        keys = np.stack([all_n.astype(np.float64), all_t], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        H = self._embed(state, view, uniq[:, 0].astype(np.int64), uniq[:, 1], layer - 1, strict)
        h_self = ad.take_cols(H, inv[:Q])
        h_nb = ad.take_cols(H, inv[Q:])
        pre = ad.add(ad.matmul(p[f"emb{layer}.Wh"], h_nb), ad.matmul(p[f"emb{layer}.Wt"], self.time_encode(dt)))
        agg = ad.relu(ad.segment_sum(pre, q_idx, Q))
        return ad.add(ad.matmul(p[f"emb{layer}.W2s"], h_self), ad.matmul(p[f"emb{layer}.W2n"], agg))

    def score_logits(self, state: StreamState, view: MemoryView, src, dst, times, strict: bool = False) -> Tensor:
        """Link logits (``1 x Q``) for candidate links ``(src[i], dst[i])`` at ``times[i]``."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        Q = src.shape[0]
        if self.cfg.mode == BIPARTITE:
            h_u = self.embed(state, view, src, times, strict)
            reg = state.registry
            m_v = view.read([reg.live[reg.anchor_of[int(v)]].slot for v in dst])
            return self.link_logit(ad.elemwise_mul(h_u, self.project(m_v)))
        H = self.embed(state, view, np.concatenate([src, dst]), np.concatenate([times, times]), strict)
        x = ad.elemwise_mul(ad.take_cols(H, np.arange(Q)), ad.take_cols(H, np.arange(Q, 2 * Q)))
        return self.link_logit(x)

    # -- persistence -------------------------------------------------------

    def save(self, path, extra: Optional[dict] = None):
        """Parameter file plus a ``.json`` sidecar with the model config."""
        ad.save_params(self.params, path)
        meta = {"model": asdict(self.cfg)}
        if extra:
            meta.update(extra)
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")

    @classmethod
    def load(cls, path) -> "HTGN":
        meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        model = cls(ModelConfig(**meta["model"]))
        values = ad.load_params(path)
        if set(values) != set(model.params):
            raise ValueError(f"{path}: parameter names do not match the model config")
        for k, v in values.items():
            if v.shape != model.params[k].shape:
                raise ValueError(f"{path}: {k} has shape {v.shape}, expected {model.params[k].shape}")
            model.params[k].value[...] = v
        return model
