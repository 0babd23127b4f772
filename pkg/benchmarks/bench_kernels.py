"""Numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel is warmed up once per backend (so JIT compilation is excluded),
then timed ``--repeat`` times; the best wall time is reported together with
a check that both backends return the same answer.
"""

import argparse
import time
from itertools import combinations

import numpy as np

from htgn import _accel
from htgn.config import learning_params
from htgn.graph import NeighborIndex, TemporalGraph
from htgn.htsbm import sample_htsbm
from htgn.kernels import max_cliques_csr, segment_sum_cols
from htgn.model import BuilderConfig, ModelConfig
from htgn.train import TrainConfig, Trainer


def random_csr(n, p, rng):
    a, b = np.array([e for e in combinations(range(n), 2) if rng.uniform() < p], dtype=np.int64).T
    src, dst = np.r_[a, b], np.r_[b, a]
    order = np.lexsort((dst, src))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), dst[order]


def best_of(fn, repeat):
    fn()  # warm-up / compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def clique_case(rng, quick):
    n = 120 if quick else 200
    indptr, indices = random_csr(n, 0.3, rng)

    def run():
        flat, offs = max_cliques_csr(indptr, indices, n)
        return {tuple(sorted(flat[offs[i]:offs[i + 1]].tolist())) for i in range(len(offs) - 1)}
    return f"max cliques (n={n}, p=0.3)", run


def neighbor_case(rng, quick):
    m, n = (20_000, 500) if quick else (200_000, 2_000)
    src, dst = rng.integers(0, n, m), rng.integers(0, n, m)
    t = np.sort(rng.uniform(0, 1e4, m))
    idx = NeighborIndex(TemporalGraph(src, dst, t, n))
    qu, qt = rng.integers(0, n, 5_000), rng.uniform(0, 1e4, 5_000)
    return f"temporal neighbours ({m} events, 5000 queries)", lambda: idx.query(qu, qt, 20)


def segment_case(rng, quick):
    c = 50_000 if quick else 500_000
    Y, seg = rng.normal(size=(32, c)), rng.integers(0, 1000, c)
    return f"segment sum (32 x {c} -> 1000)", lambda: segment_sum_cols(Y, seg, 1000)


def epoch_case(rng, quick):
    g, _ = sample_htsbm(learning_params(), 0)
    cfg = ModelConfig(d_m=16, d_t=8, d_h=16, hidden=16, neighbor_cap=10)

    def run():
        tr = Trainer(g, cfg, BuilderConfig(), TrainConfig(seed=0))
        return tr.train_epoch(1).loss
    return f"one training epoch ({len(g)} events)", run


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=1e-10, atol=1e-10)
    if isinstance(a, float):
        return abs(a - b) <= 1e-9 * max(1.0, abs(a))
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<48} {'numba':>10} {'numpy':>10} {'speed-up':>9}  agree")
    for make in (clique_case, neighbor_case, segment_case, epoch_case):
        name, fn = make(np.random.default_rng(0), args.quick)
        res = {}
        for backend in ("numba", "numpy"):
            prev = _accel.set_backend(backend)
            try:
                res[backend] = best_of(fn, 1 if make is epoch_case else args.repeat)
            finally:
                _accel.set_backend(prev)
        (tn, on), (tp, op) = res["numba"], res["numpy"]
        print(f"{name:<48} {tn * 1e3:>8.1f}ms {tp * 1e3:>8.1f}ms {tp / tn:>8.1f}x  {same(on, op)}")


if __name__ == "__main__":
    main()
