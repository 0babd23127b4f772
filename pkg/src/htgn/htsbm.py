"""Hypergraph temporal stochastic block model: sampling and the snapshot-duration sweep.

Background links follow a time-inhomogeneous Poisson process per node pair
with intensity ``noise_scale * Lambda0[c(i), c(j)] * lam * exp(-lam * t)``.
Planted hyperedges fire as bursts: all pairwise links of the member set
inside ``[tau, tau + jitter]``.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .graph import TemporalGraph
from .hyperedges import HyperedgeBuilder

log = logging.getLogger(__name__)


@dataclass
class PlantedHyperedge:
    members: tuple
    low: float = 0.0  # activation window; high=None means the horizon
    high: Optional[float] = None
    bursts: int = 1


@dataclass
class HtsbmParams:
    n: int
    K: int
    community_of: Sequence[int]
    Lambda0: np.ndarray
    lam: float = 1.0
    planted: list = field(default_factory=list)
    noise_scale: float = 1.0
    horizon: float = 1.0
    jitter: float = 1e-3

    def __post_init__(self):
        self.community_of = np.asarray(self.community_of, dtype=np.int64)
        self.Lambda0 = np.asarray(self.Lambda0, dtype=np.float64)
        self.planted = [p if isinstance(p, PlantedHyperedge) else PlantedHyperedge(**p)
                        for p in self.planted]
        self.validate()

    def validate(self):
        if self.community_of.shape != (self.n,):
            raise ValueError(f"community_of must have length n={self.n}")
        if self.n and (self.community_of.min() < 0 or self.community_of.max() >= self.K):
            raise ValueError("community index out of range")
        L = self.Lambda0
        if L.shape != (self.K, self.K):
            raise ValueError(f"Lambda0 must be {self.K}x{self.K}")
        if not np.allclose(L, L.T):
            raise ValueError("Lambda0 must be symmetric")
        if np.any(L < 0) or np.any(L > 1):
            raise ValueError("Lambda0 entries must lie in [0, 1]")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.noise_scale < 0 or self.horizon <= 0 or self.jitter < 0:
            raise ValueError("noise_scale, jitter must be >= 0 and horizon > 0")
        for p in self.planted:
            m = p.members
            if len(set(m)) < 3 or len(set(m)) != len(m):
                raise ValueError(f"planted hyperedge {m} needs 3+ distinct members")
            if min(m) < 0 or max(m) >= self.n:
                raise ValueError(f"planted hyperedge {m} has out-of-range members")
            if len({int(self.community_of[x]) for x in m}) != 1:
                raise ValueError(f"planted hyperedge {m} spans communities")
            if p.bursts < 1:
                raise ValueError("bursts must be >= 1")

    def pair_intensity(self, i: int, j: int, t: float) -> float:
        """Programmed background intensity of pair ``(i, j)`` at time ``t``."""
        a, b = self.community_of[i], self.community_of[j]
        return self.noise_scale * self.Lambda0[a, b] * self.lam * math.exp(-self.lam * t)

    def expected_background(self) -> float:
        """Expected number of background links over ``[0, horizon]``."""
        sizes = np.bincount(self.community_of, minlength=self.K).astype(np.float64)
        pairs = np.outer(sizes, sizes)
        pairs[np.diag_indices(self.K)] = sizes * (sizes - 1) / 2.0
        total = np.sum(np.triu(pairs * self.Lambda0))
        return float(self.noise_scale * total * (1.0 - math.exp(-self.lam * self.horizon)))

    def to_dict(self) -> dict:
        return {
            "n": self.n, "K": self.K, "community_of": self.community_of.tolist(),
            "Lambda0": self.Lambda0.tolist(), "lam": self.lam, "noise_scale": self.noise_scale,
            "horizon": self.horizon, "jitter": self.jitter,
            "planted": [{"members": list(p.members), "low": p.low, "high": p.high, "bursts": p.bursts}
                        for p in self.planted],
        }


def block_communities(n: int, K: int) -> np.ndarray:
    """Contiguous, near-equal community blocks."""
    return np.minimum(np.arange(n) * K // max(n, 1), K - 1).astype(np.int64)


def plant_disjoint(community_of, count: int, size: int = 3, seed: int = 0, **kw) -> list:
    """``count`` node-disjoint planted hyperedges, each inside one community."""
    rng = np.random.default_rng(seed)
    community_of = np.asarray(community_of)
    pools = {c: list(rng.permutation(np.flatnonzero(community_of == c))) for c in np.unique(community_of)}
    out = []
    cs = sorted(pools)
    k = 0
    while len(out) < count:
        if not any(len(p) >= size for p in pools.values()):
            raise ValueError(f"cannot plant {count} disjoint hyperedges of size {size}")
        c = cs[k % len(cs)]
        k += 1
        if len(pools[c]) >= size:
            members = tuple(sorted(int(pools[c].pop()) for _ in range(size)))
            out.append(PlantedHyperedge(members, **kw))
    return out


def plant_gadgets(community_of, slots, starts, lone_slot: Optional[tuple] = None) -> list:
    """Triangle gadgets whose union hides a false clique.

    Gadget ``c`` lives in community ``c`` and uses its first six nodes
    ``a..f``: triangles ``{a,b,c}``, ``{c,d,e}`` and ``{a,e,f}``.  When all
    three fire inside one snapshot the cross triangle ``{a,c,e}`` becomes a
    maximal clique that was never planted.  ``slots[c]`` is the length of
    the activation window starting at ``starts[c]``.  ``lone_slot=(low, high)``
    adds one more isolated triangle on nodes ``6, 7, 8`` of community 0.
    """
    community_of = np.asarray(community_of)
    out = []
    for c, (slot, lo) in enumerate(zip(slots, starts)):
        nodes = np.flatnonzero(community_of == c)
        if nodes.shape[0] < 6:
            raise ValueError(f"community {c} needs 6 nodes for a gadget")
        a, b, cc, d, e, f = (int(x) for x in nodes[:6])
        for tri in ((a, b, cc), (cc, d, e), (a, e, f)):
            out.append(PlantedHyperedge(tri, float(lo), float(lo) + float(slot)))
    if lone_slot is not None:
        nodes = np.flatnonzero(community_of == 0)
        if nodes.shape[0] < 9:
            raise ValueError("community 0 needs 9 nodes for the lone triangle")
        out.append(PlantedHyperedge(tuple(int(x) for x in nodes[6:9]), *map(float, lone_slot)))
    return out


DEFAULT_DURATIONS = (1.0, 3.0, 8.0, 20.0, 50.0)


def default_sweep_params() -> HtsbmParams:
    """60 nodes, 3 communities, 10 planted triangles, light background.

    Burst width (``jitter``) is 1 time unit, so ``DEFAULT_DURATIONS`` run from
    1x to 50x the burst width.
    """
    n, K, H = 60, 3, 1000.0
    com = block_communities(n, K)
    starts = np.linspace(0.1 * H, 0.85 * H, 4)
    planted = plant_gadgets(com, (14.0, 30.0, 80.0), starts[:3], lone_slot=(starts[3], starts[3] + 14.0))
    L0 = np.full((K, K), 0.1) + 0.9 * np.eye(K)
    return HtsbmParams(n, K, com, L0, lam=1.0 / H, planted=planted, noise_scale=0.05, horizon=H, jitter=1.0)


def sample_htsbm(p: HtsbmParams, seed: int):
    """Draw one event stream; returns ``(graph, planted member sets)``."""
    rng = np.random.default_rng(seed)
    p.validate()
    src, dst, ts = [], [], []

    # planted bursts
    for ph in p.planted:
        hi = p.horizon if ph.high is None else min(ph.high, p.horizon)
        hi = max(ph.low, hi - p.jitter)
        members = sorted(ph.members)
        pairs = [(members[i], members[j]) for i in range(len(members)) for j in range(i + 1, len(members))]
        for _ in range(ph.bursts):
            tau = rng.uniform(ph.low, hi)
            offs = rng.uniform(0.0, p.jitter, size=len(pairs))
            for (a, b), o in zip(pairs, offs):
                src.append(a)
                dst.append(b)
                ts.append(tau + o)

    # background: thinning with per-pair majorant lam * noise * max(Lambda0)
    lmax = float(p.Lambda0.max()) if p.Lambda0.size else 0.0
    n_pairs = p.n * (p.n - 1) // 2
    rate = p.lam * p.noise_scale * lmax * n_pairs
    if rate > 0:
        n_cand = rng.poisson(rate * p.horizon)
        t_c = rng.uniform(0.0, p.horizon, size=n_cand)
        k = rng.integers(0, n_pairs, size=n_cand)
        iu, ju = np.triu_indices(p.n, 1)
        i, j = iu[k], ju[k]
        accept_p = p.Lambda0[p.community_of[i], p.community_of[j]] / lmax * np.exp(-p.lam * t_c)
        keep = rng.uniform(size=n_cand) < accept_p
        flip = rng.uniform(size=n_cand) < 0.5
        a = np.where(flip, j, i)[keep]
        b = np.where(flip, i, j)[keep]
        src.extend(a.tolist())
        dst.extend(b.tolist())
        ts.extend(t_c[keep].tolist())

    if not ts:
        log.warning("HT-SBM sample is empty (horizon %.3g, lam %.3g)", p.horizon, p.lam)
    order = np.argsort(np.asarray(ts, dtype=np.float64), kind="stable")
    g = TemporalGraph(np.asarray(src, dtype=np.int64)[order], np.asarray(dst, dtype=np.int64)[order],
                      np.asarray(ts, dtype=np.float64)[order], p.n)
    planted = sorted({tuple(sorted(ph.members)) for ph in p.planted}, key=lambda c: (len(c), c))
    return g, planted


@dataclass
class AccuracyReport:
    precision: float
    recall: float
    jaccard: float
    n_recovered: int
    n_planted: int


def evaluate_reconstruction(recovered, planted) -> AccuracyReport:
    """Exact set-of-sets match; ``0/0`` counts as 1."""
    rec = {frozenset(c) for c in recovered}
    pla = {frozenset(c) for c in planted}
    hit = len(rec & pla)
    union = len(rec | pla)

    def ratio(a, b):
        return 1.0 if b == 0 else a / b

    return AccuracyReport(ratio(hit, len(rec)), ratio(hit, len(pla)), ratio(hit, union), len(rec), len(pla))


def recover_hyperedges(g: TemporalGraph, duration, mode: str = "window") -> set:
    """Every 3+ member hyperedge created while streaming ``g`` through the builder."""
    if mode == "window":
        builder = HyperedgeBuilder(num_nodes=g.num_nodes, b=None, window=float(duration))
    elif mode == "count":
        builder = HyperedgeBuilder(num_nodes=g.num_nodes, b=int(duration))
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    builder.run(g)
    return {frozenset(m.new_members) for m in builder.merge_log if len(m.new_members) >= 3}


@dataclass
class SweepResult:
    rows: list  # (duration, seed, precision, recall, jaccard)
    summary: list  # (duration, mean jaccard, std jaccard, mean precision, mean recall)
    spearman: float

    def write(self, rows_path, summary_path):
        with Path(rows_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["duration", "seed", "precision", "recall", "jaccard"])
            w.writerows(self.rows)
        with Path(summary_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["duration", "mean_jaccard", "std_jaccard", "mean_precision", "mean_recall"])
            w.writerows(self.summary)


def duration_sweep(p: HtsbmParams, durations, seeds: int = 20, mode: str = "window",
                   seed0: int = 0) -> SweepResult:
    """Reconstruction accuracy against snapshot duration, averaged over seeds."""
    durations = list(durations)
    if durations != sorted(durations) or len(durations) < 4:
        raise ValueError("durations must be ascending with at least 4 points")
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    rows = []
    samples = [sample_htsbm(p, seed0 + s) for s in range(seeds)]
    for d in durations:
        for s, (g, planted) in enumerate(samples):
            rep = evaluate_reconstruction(recover_hyperedges(g, d, mode), planted)
            rows.append((d, seed0 + s, rep.precision, rep.recall, rep.jaccard))
    summary = []
    for d in durations:
        r = np.array([row[2:] for row in rows if row[0] == d])
        summary.append((d, float(r[:, 2].mean()), float(r[:, 2].std()), float(r[:, 0].mean()),
                        float(r[:, 1].mean())))
    means = [s[1] for s in summary]
    # a flat curve has no rank correlation
    rho = spearmanr(durations, means).statistic if max(means) > min(means) else float("nan")
    return SweepResult(rows, summary, float(rho))


def write_planted(planted, path):
    Path(path).write_text("".join(json.dumps({"members": list(c)}) + "\n" for c in planted), encoding="utf-8")


def read_planted(path) -> list:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(tuple(json.loads(line)["members"]))
    return out
