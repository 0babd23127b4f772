"""Training loop, negative sampling and MRR evaluation."""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import BIPARTITE, SplitSpec, TemporalGraph, split_bounds
from .hyperedges import memory_footprint
from .model import HTGN, BuilderConfig, MemoryView, ModelConfig, StreamState

log = logging.getLogger(__name__)

RANDOM_MRR_100 = sum(1.0 / r for r in range(1, 102)) / 101.0


def random_baseline_mrr(n_neg: int) -> float:
    """Expected MRR of a scorer whose positive rank is uniform on ``1..n_neg+1``."""
    return sum(1.0 / r for r in range(1, n_neg + 2)) / (n_neg + 1)


@dataclass
class TrainConfig:
    batch_size: int = 200
    lr: float = 1e-4
    epochs: int = 10
    seed: int = 0
    negatives_per_positive: int = 1
    eval_negatives: int = 100
    neg_mix: float = 0.5
    patience: int = 5
    eval_every: int = 1
    split: tuple = (0.70, 0.15, 0.15)

    def validate(self):
        for k in ("batch_size", "negatives_per_positive", "eval_negatives", "patience", "eval_every"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.neg_mix <= 1.0:
            raise ValueError("neg_mix must lie in [0, 1]")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        SplitSpec(*self.split)
        return self


@dataclass
class EpochStats:
    epoch: int
    loss: Optional[float]
    n_batches: int
    events_per_sec: float
    seconds: float


@dataclass
class EvalResult:
    mrr: float
    mrr_random: float
    mrr_historical: float
    n_queries: int
    n_negatives: int

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, "mrr_random": self.mrr_random, "mrr_historical": self.mrr_historical,
                "n_queries": self.n_queries, "n_negatives": self.n_negatives}


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# negatives and ranking
# ---------------------------------------------------------------------------


def sample_negatives(candidates, u: int, v: int, t: float, k: int, mix: float, history: dict,
                     rng: np.random.Generator):
    """``k`` negative destinations for the query ``(u, v, t)``.

    ``ceil(k * mix)`` come uniformly from ``candidates`` minus ``{u, v}``;
    the rest uniformly from destinations seen with ``u`` before ``t``
    (``history[u]`` maps destination to last time), again minus ``v``.
    With no history every negative is random.  Returns
    ``(negatives, n_random)``; the first ``n_random`` entries are random.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    hist = history.get(u, {})
    pool = [d for d, tl in sorted(hist.items()) if tl < t and d != v]
    n_rand = math.ceil(k * mix) if pool else k
    cand = np.asarray(candidates, dtype=np.int64)
    cand = cand[(cand != v) & (cand != u)]
    if n_rand and cand.shape[0] == 0:
        raise ValueError(f"no valid negative candidates for ({u}, {v})")
    out = np.empty(k, dtype=np.int64)
    if n_rand:
        out[:n_rand] = cand[rng.integers(0, cand.shape[0], size=n_rand)]
    if k - n_rand:
        out[n_rand:] = np.asarray(pool, dtype=np.int64)[rng.integers(0, len(pool), size=k - n_rand)]
    return out, n_rand


def pessimistic_ranks(pos, neg) -> np.ndarray:
    """``1 + #{negatives scoring >= positive}`` per query row."""
    pos = np.asarray(pos, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg, dtype=np.float64).reshape(pos.shape[0], -1)
    return 1 + (neg >= pos[:, None]).sum(axis=1)


def mean_reciprocal_rank(ranks) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("MRR of an empty query set")
    return float(np.mean(1.0 / ranks))


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------


class Trainer:
    """One training context: model, optimizer, stream state and history."""

    def __init__(self, graph: TemporalGraph, model_cfg: ModelConfig, builder_cfg: BuilderConfig,
                 cfg: TrainConfig, model: Optional[HTGN] = None, debug: bool = False):
        self.graph = graph
        self.cfg = cfg.validate()
        self.model = model if model is not None else HTGN(model_cfg, seed=cfg.seed)
        self.state = StreamState(graph, self.model.cfg, builder_cfg, seed=cfg.seed, debug=debug)
        self.opt = ad.Adam(self.model.params, lr=cfg.lr)
        n = len(graph)
        a, b = split_bounds(n, SplitSpec(*cfg.split)) if n else (0, 0)
        self.ranges = {"train": (0, a), "val": (a, b), "test": (b, n)}
        if self.model.cfg.mode == BIPARTITE:
            self.candidates = graph.side_b_nodes()
        else:
            self.candidates = np.arange(graph.num_nodes, dtype=np.int64)
        self.reset_stream()

    def reset_stream(self):
        self.state.reset()
        self.history: dict = {}
        self.cursor = 0

    def batches(self, lo: int, hi: int):
        """``[s, e)`` ranges of about ``batch_size`` events; a timestamp is never split."""
        t = self.graph.t
        s = lo
        while s < hi:
            e = min(s + self.cfg.batch_size, hi)
            while e < hi and t[e] == t[e - 1]:
                e += 1
            yield s, e
            s = e

    def _consume(self, s: int, e: int) -> list:
        g = self.graph
        ops = []
        for i in range(s, e):
            ops.extend(self.state.ingest(i))
            u, v, t = int(g.src[i]), int(g.dst[i]), float(g.t[i])
            self.history.setdefault(u, {})[v] = t
            if self.model.cfg.mode != BIPARTITE:
                self.history.setdefault(v, {})[u] = t
        if e > s:
            self.state.prune(float(g.t[e - 1]))
        self.cursor = e
        return ops

    def _commit(self, view: MemoryView):
        self.model.apply_ops(view, self.state.pending)
        self.state.pending = []

    def roll_forward(self, hi: int):
        """Advance structure and memory through events ``[cursor, hi)`` without scoring."""
        with ad.no_grad():
            for s, e in self.batches(self.cursor, hi):
                view = MemoryView(self.state.bank)
                self._commit(view)
                view.persist()
                self.state.pending = self._consume(s, e)

    def train_epoch(self, epoch: int) -> EpochStats:
        """One chronological pass over the training split from a fresh stream."""
        lo, hi = self.ranges["train"]
        self.reset_stream()
        g = self.graph
        rng = np.random.default_rng([self.cfg.seed, epoch, 1])
        k = self.cfg.negatives_per_positive
        losses = []
        t0 = time.perf_counter()
        tape = ad.Tape()
        with ad.use_tape(tape):
            for bi, (s, e) in enumerate(self.batches(lo, hi)):
                view = MemoryView(self.state.bank)
                self._commit(view)
                src, dst, ts = g.src[s:e], g.dst[s:e], g.t[s:e]
                negs = np.concatenate([sample_negatives(self.candidates, int(u), int(v), float(t), k, 1.0,
                                                        self.history, rng)[0]
                                       for u, v, t in zip(src, dst, ts)])
                pos = self.model.score_logits(self.state, view, src, dst, ts, strict=True)
                neg = self.model.score_logits(self.state, view, np.repeat(src, k), negs, np.repeat(ts, k),
                                              strict=True)
                loss = ad.scale(ad.add(ad.reduce_mean(ad.log_sigmoid(pos)),
                                       ad.reduce_mean(ad.log_sigmoid(ad.scale(neg, -1.0)))), -1.0)
                lv = loss.item()
                if not math.isfinite(lv):
                    bad = int(np.argmax(~np.isfinite(pos.value.reshape(-1)))) + s
                    raise TrainingError(f"non-finite loss in batch {bi} (events {s}..{e}); "
                                        f"first suspect event {bad}: ({g.src[bad]}, {g.dst[bad]}, {g.t[bad]})")
                ad.backward(loss)
                self.opt.step()
                view.persist()
                self.state.pending = self._consume(s, e)
                losses.append(lv)
        secs = time.perf_counter() - t0
        n_ev = hi - lo
        return EpochStats(epoch, float(np.mean(losses)) if losses else None, len(losses),
                          n_ev / secs if secs > 0 else float("inf"), secs)

    def evaluate(self, split: str, oracle: bool = False) -> EvalResult:
        """MRR over ``split``; the stream must already stand at the split start.

        Each event is scored against ``eval_negatives`` sampled negatives and
        then fed to the stream.  ``oracle=True`` replaces the model with a
        scorer that knows the answer.
        """
        lo, hi = self.ranges[split]
        if hi <= lo:
            raise ValueError(f"split {split!r} is empty")
        if self.cursor != lo:
            raise RuntimeError(f"stream stands at event {self.cursor}, split {split!r} starts at {lo}")
        g = self.graph
        rng = np.random.default_rng([self.cfg.seed, lo, 2])
        k = self.cfg.eval_negatives
        ranks, ranks_r, ranks_h = [], [], []
        with ad.no_grad():
            for s, e in self.batches(lo, hi):
                view = MemoryView(self.state.bank)
                self._commit(view)
                src, dst, ts = g.src[s:e], g.dst[s:e], g.t[s:e]
                draws = [sample_negatives(self.candidates, int(u), int(v), float(t), k, self.cfg.neg_mix,
                                          self.history, rng) for u, v, t in zip(src, dst, ts)]
                negs = np.stack([d[0] for d in draws])
                n_rand = np.array([d[1] for d in draws])
                if oracle:
                    pos = np.ones(e - s)
                    neg = np.zeros((e - s, k))
                else:
                    cs = np.concatenate([src, np.repeat(src, k)])
                    cd = np.concatenate([dst, negs.reshape(-1)])
                    ct = np.concatenate([ts, np.repeat(ts, k)])
                    logits = self.model.score_logits(self.state, view, cs, cd, ct, strict=True).value.reshape(-1)
                    pos = logits[: e - s]
                    neg = logits[e - s:].reshape(e - s, k)
                ranks.append(pessimistic_ranks(pos, neg))
                cols = np.arange(k)[None, :]
                big = np.inf
                ranks_r.append(pessimistic_ranks(pos, np.where(cols < n_rand[:, None], neg, -big)))
                ranks_h.append(pessimistic_ranks(pos, np.where(cols >= n_rand[:, None], neg, -big)))
                view.persist()
                self.state.pending = self._consume(s, e)
        r = np.concatenate(ranks)
        return EvalResult(mean_reciprocal_rank(r), mean_reciprocal_rank(np.concatenate(ranks_r)),
                          mean_reciprocal_rank(np.concatenate(ranks_h)), int(r.shape[0]), k)

    def footprint(self):
        return memory_footprint(self.state.registry, self.graph.num_nodes)

    def snapshot_params(self) -> dict:
        return {k: p.value.copy() for k, p in self.model.params.items()}

    def load_params(self, values: dict):
        for k, v in values.items():
            self.model.params[k].value[...] = v


# ---------------------------------------------------------------------------
# full run with metrics
# ---------------------------------------------------------------------------

METRIC_FIELDS = ["epoch", "split", "loss", "mrr", "peak_slots", "ratio", "seconds"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class FitResult:
    rows: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_mrr: Optional[float] = None
    best_params: Optional[dict] = None
    epoch_stats: list = field(default_factory=list)


def fit(trainer: Trainer, wall_clock: bool = False, on_epoch=None) -> FitResult:
    """Train with periodic validation and early stopping on validation MRR.

    Metric rows follow ``METRIC_FIELDS``; ``seconds`` stays blank unless
    ``wall_clock`` is set, so repeated runs write identical files.
    """
    cfg = trainer.cfg
    res = FitResult(best_params=trainer.snapshot_params())
    stale = 0
    val_lo, val_hi = trainer.ranges["val"]
    for epoch in range(1, cfg.epochs + 1):
        st = trainer.train_epoch(epoch)
        res.epoch_stats.append(st)
        peak, _, ratio = trainer.footprint()
        res.rows.append([epoch, "train", st.loss, None, peak, ratio, st.seconds if wall_clock else None])
        if (epoch % cfg.eval_every == 0 or epoch == cfg.epochs) and val_hi > val_lo:
            t0 = time.perf_counter()
            ev = trainer.evaluate("val")
            peak, _, ratio = trainer.footprint()
            res.rows.append([epoch, "val", None, ev.mrr, peak, ratio,
                             time.perf_counter() - t0 if wall_clock else None])
            log.info("epoch %d loss %.5f val mrr %.4f", epoch, st.loss or float("nan"), ev.mrr)
            if res.best_val_mrr is None or ev.mrr > res.best_val_mrr:
                res.best_val_mrr, res.best_epoch = ev.mrr, epoch
                res.best_params = trainer.snapshot_params()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop after epoch %d", epoch)
                    if on_epoch:
                        on_epoch(epoch, res)
                    break
        if on_epoch:
            on_epoch(epoch, res)
    return res


def write_metrics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
