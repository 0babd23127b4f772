import math

import numpy as np
import pytest

from htgn import autodiff as ad
from htgn.config import learning_params
from htgn.graph import BIPARTITE, TemporalGraph
from htgn.htsbm import sample_htsbm
from htgn.model import BuilderConfig, ModelConfig
from htgn.train import (RANDOM_MRR_100, TrainConfig, Trainer, TrainingError, fit, mean_reciprocal_rank,
                        pessimistic_ranks, random_baseline_mrr, sample_negatives, write_metrics)

SMALL = dict(d_m=12, d_t=6, d_h=12, hidden=12, neighbor_cap=5)


# -- ranking -------------------------------------------------------------------------


def test_mrr_arithmetic():
    assert mean_reciprocal_rank([1, 2, 4]) == pytest.approx(7 / 12)
    with pytest.raises(ValueError):
        mean_reciprocal_rank([])


def test_oracle_anti_oracle_and_constant_scorers():
    neg = np.zeros((5, 100))
    assert mean_reciprocal_rank(pessimistic_ranks(np.ones(5), neg)) == 1.0
    assert mean_reciprocal_rank(pessimistic_ranks(-np.ones(5), neg)) == pytest.approx(1 / 101)
    assert mean_reciprocal_rank(pessimistic_ranks(np.zeros(5), neg)) == pytest.approx(1 / 101)


def test_random_baseline_analytic_value():
    assert random_baseline_mrr(100) == RANDOM_MRR_100
    assert abs(RANDOM_MRR_100 - 0.0514) < 1e-4
    assert random_baseline_mrr(1) == 0.75


def test_random_baseline_by_simulation():
    rng = np.random.default_rng(0)
    trials = 100_000
    pos = rng.uniform(size=trials)
    neg = rng.uniform(size=(trials, 100))
    ranks = pessimistic_ranks(pos, neg)
    mrr = mean_reciprocal_rank(ranks)
    r = np.arange(1, 102)
    sd = math.sqrt(np.mean(1.0 / r ** 2) - RANDOM_MRR_100 ** 2) / math.sqrt(trials)
    assert abs(mrr - RANDOM_MRR_100) <= 4 * sd


# -- negatives -------------------------------------------------------------------------


def test_pure_random_negatives():
    rng = np.random.default_rng(1)
    hist = {0: {5: 1.0, 6: 1.0}}
    negs, n_rand = sample_negatives(np.arange(10), 0, 1, 2.0, 50, 1.0, hist, rng)
    assert n_rand == 50 and not ({0, 1} & set(negs.tolist()))


def test_empty_history_falls_back_to_random():
    rng = np.random.default_rng(2)
    negs, n_rand = sample_negatives(np.arange(10), 0, 1, 2.0, 8, 0.0, {}, rng)
    assert n_rand == 8 and len(negs) == 8


def test_half_mix_counts():
    rng = np.random.default_rng(3)
    a, b, c = 5, 6, 7
    hist = {0: {a: 0.5, b: 1.0, c: 1.5}}
    negs, n_rand = sample_negatives(np.arange(100, 200), 0, 1, 2.0, 4, 0.5, hist, rng)
    assert n_rand == 2
    assert all(x >= 100 for x in negs[:2]) and set(negs[2:].tolist()) <= {a, b, c}


def test_history_respects_time_and_positive():
    rng = np.random.default_rng(4)
    hist = {0: {5: 1.0, 6: 3.0, 1: 0.5}}
    negs, _ = sample_negatives(np.arange(100, 110), 0, 1, 2.0, 40, 0.0, hist, rng)
    assert set(negs.tolist()) == {5}


# -- trainer ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def data():
    g, _ = sample_htsbm(learning_params(), 0)
    return g


def trainer(g, **kw):
    tcfg = dict(lr=3e-3, epochs=1, seed=0)
    tcfg.update(kw)
    return Trainer(g, ModelConfig(**SMALL), BuilderConfig(), TrainConfig(**tcfg))


def test_batches_never_split_a_timestamp():
    t = np.repeat(np.arange(30, dtype=float), 7)
    g = TemporalGraph(np.zeros(t.size, int), np.ones(t.size, int), t, 2)
    tr = trainer(g, batch_size=10)
    bounds = list(tr.batches(0, len(g)))
    assert bounds[0][0] == 0 and bounds[-1][1] == len(g)
    for (s, e), (s2, _) in zip(bounds, bounds[1:]):
        assert e == s2 and t[e] != t[e - 1]


def test_empty_training_split():
    g = TemporalGraph([], [], [], 3)
    tr = trainer(g)
    st = tr.train_epoch(1)
    assert st.n_batches == 0 and st.loss is None
    with pytest.raises(ValueError, match="empty"):
        tr.evaluate("val")


def test_frozen_parameters_repeat_losses(data):
    tr = trainer(data, lr=0.0)
    a = tr.train_epoch(1).loss
    b = tr.train_epoch(1).loss
    assert a == b


def test_same_seed_same_run(data):
    runs = []
    for _ in range(2):
        tr = trainer(data)
        st = tr.train_epoch(1)
        ev = tr.evaluate("val")
        runs.append((st.loss, ev.mrr, ev.mrr_random, ev.mrr_historical))
    assert runs[0] == runs[1]


def test_evaluate_requires_stream_at_split_start(data):
    tr = trainer(data)
    with pytest.raises(RuntimeError, match="stands at"):
        tr.evaluate("val")
    tr.roll_forward(tr.ranges["val"][0])
    res = tr.evaluate("val", oracle=True)
    assert res.mrr == 1.0 and res.n_negatives == 100
    assert res.n_queries == tr.ranges["val"][1] - tr.ranges["val"][0]


def test_training_loss_drops(data):
    tr = trainer(data)
    first = tr.train_epoch(1).loss
    for ep in range(2, 20):
        tr.train_epoch(ep)
    last = tr.train_epoch(20).loss
    assert last < first


def _grads_seen(tr):
    seen = {k: False for k in tr.model.params}
    step = tr.opt.step

    def spy():
        for k, p in tr.model.params.items():
            seen[k] |= bool(np.any(p.grad != 0))
        step()

    tr.opt.step = spy
    tr.train_epoch(1)
    return seen


def test_every_parameter_gets_a_gradient(data):
    seen = _grads_seen(trainer(data))
    assert all(seen.values()), [k for k, v in seen.items() if not v]


def test_every_bipartite_parameter_gets_a_gradient():
    rng = np.random.default_rng(0)
    n_a, n_b, m = 20, 6, 400
    src = rng.integers(0, n_a, m)
    dst = n_a + (src % n_b + rng.integers(0, 2, m)) % n_b
    t = np.sort(rng.uniform(0, 100, m))
    side_b = np.r_[np.zeros(n_a, bool), np.ones(n_b, bool)]
    g = TemporalGraph(src, dst, t, n_a + n_b, kind=BIPARTITE, side_b=side_b)
    cfg = ModelConfig(mode=BIPARTITE, **SMALL)
    tr = Trainer(g, cfg, BuilderConfig(capacity=4, t_prime=20.0), TrainConfig(lr=1e-3, seed=0))
    seen = _grads_seen(tr)
    # bipartite mode never merges, so the merge network is legitimately idle
    dead = [k for k, v in seen.items() if not v and not k.startswith("merge.")]
    assert not dead and not any(v for k, v in seen.items() if k.startswith("merge."))
    assert tr.footprint()[0] == n_b
    tr.evaluate("val")


@pytest.mark.filterwarnings("ignore:invalid value")
def test_non_finite_loss_is_reported(data):
    tr = trainer(data)
    tr.model.params["link.b2"].value[...] = np.nan
    with pytest.raises(TrainingError, match="batch 0"):
        tr.train_epoch(1)


def test_fit_early_stops_and_writes_metrics(data, tmp_path):
    tr = trainer(data, epochs=6, patience=1, lr=0.0)
    res = fit(tr)
    val = [r for r in res.rows if r[1] == "val"]
    assert len(res.epoch_stats) == 2 and len(val) == 2  # flat MRR goes stale after one more epoch
    assert res.best_epoch == 1
    write_metrics(res.rows, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "epoch,split,loss,mrr,peak_slots,ratio,seconds"
    assert lines[1].endswith(",")  # seconds blank without wall_clock


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(neg_mix=1.5).validate()
    with pytest.raises(ValueError):
        TrainConfig(split=(0.5, 0.5, 0.5)).validate()
